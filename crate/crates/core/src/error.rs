// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("invalid token: {0}")]
    InvalidToken(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("record has no positive activation, so there is no key token")]
    NoKeyToken,

    #[error("backend does not support masking")]
    MaskingUnsupported,

    #[error("neuron {layer}:{index} is not served by this backend")]
    NeuronNotFound { layer: u32, index: u32 },

    #[error("backend transport error: {0}")]
    Transport(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error originates from the activation or substitution
    /// backend rather than from the caller's inputs.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::Transport(_) | Error::NeuronNotFound { .. } | Error::MaskingUnsupported
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
