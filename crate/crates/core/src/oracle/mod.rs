// SPDX-License-Identifier: Apache-2.0

//! Access to the target neuron's activations.
//!
//! Every stage that needs ground truth from the subject model goes through
//! [`OracleBackend`]. Two backends ship with the crate: a rule-based
//! [`SyntheticOracle`] used for exact verification, and a [`RemoteOracle`]
//! that speaks the JSON activation protocol over HTTP.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::model::{NeuronRef, Token};

mod remote;
mod synthetic;

pub use remote::{RemoteOracle, RemoteSubstitutes};
pub use synthetic::{synthetic_activation, ContextAtom, Rule, SyntheticNeuronSpec, SyntheticOracle};

/// Reserved mask token used by the synthetic backend.
pub const SYNTHETIC_MASK: &str = "<MASK>";

pub trait OracleBackend: Send + Sync {
    fn supports_masking(&self) -> bool {
        true
    }

    /// The padding token substituted at masked positions.
    fn mask_token(&self) -> &Token;

    /// Raw activation of `neuron` on every position of `tokens`.
    fn activations(&self, neuron: NeuronRef, tokens: &[Token]) -> Result<Vec<f64>>;

    /// Activations with `tokens[mask_index]` replaced by the mask token.
    fn masked_activations(
        &self,
        neuron: NeuronRef,
        tokens: &[Token],
        mask_index: usize,
    ) -> Result<Vec<f64>> {
        if !self.supports_masking() {
            return Err(Error::MaskingUnsupported);
        }
        let masked = substitute(tokens, mask_index, self.mask_token())?;
        self.activations(neuron, &masked)
    }
}

impl<O: OracleBackend + ?Sized> OracleBackend for &O {
    fn supports_masking(&self) -> bool {
        (**self).supports_masking()
    }

    fn mask_token(&self) -> &Token {
        (**self).mask_token()
    }

    fn activations(&self, neuron: NeuronRef, tokens: &[Token]) -> Result<Vec<f64>> {
        (**self).activations(neuron, tokens)
    }

    fn masked_activations(
        &self,
        neuron: NeuronRef,
        tokens: &[Token],
        mask_index: usize,
    ) -> Result<Vec<f64>> {
        (**self).masked_activations(neuron, tokens, mask_index)
    }
}

/// Copy of `tokens` with position `index` replaced.
pub fn substitute(tokens: &[Token], index: usize, replacement: &Token) -> Result<Vec<Token>> {
    if index >= tokens.len() {
        return Err(Error::Usage(format!(
            "position {index} out of range for {} tokens",
            tokens.len()
        )));
    }
    let mut out = tokens.to_vec();
    out[index] = replacement.clone();
    Ok(out)
}

/// Wraps a backend and counts the queries issued through it.
#[derive(Debug)]
pub struct CountingOracle<O> {
    inner: O,
    queries: AtomicUsize,
}

impl<O: OracleBackend> CountingOracle<O> {
    pub fn new(inner: O) -> Self {
        CountingOracle {
            inner,
            queries: AtomicUsize::new(0),
        }
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset(&self) -> usize {
        self.queries.swap(0, Ordering::Relaxed)
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: OracleBackend> OracleBackend for CountingOracle<O> {
    fn supports_masking(&self) -> bool {
        self.inner.supports_masking()
    }

    fn mask_token(&self) -> &Token {
        self.inner.mask_token()
    }

    fn activations(&self, neuron: NeuronRef, tokens: &[Token]) -> Result<Vec<f64>> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.activations(neuron, tokens)
    }

    fn masked_activations(
        &self,
        neuron: NeuronRef,
        tokens: &[Token],
        mask_index: usize,
    ) -> Result<Vec<f64>> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.masked_activations(neuron, tokens, mask_index)
    }
}
