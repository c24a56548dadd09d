// SPDX-License-Identifier: Apache-2.0

//! Occlusion saliency: how much masking one token lowers the neuron's
//! activation on another.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NeuronRef, PipelineConfig, Token};
use crate::oracle::OracleBackend;

/// `get(k, j)` is the importance of token `k` for the activation on token `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    n: usize,
    values: Vec<f64>,
    /// Unmasked activations the ratios were taken against.
    base: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, base: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if base.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Usage("importance matrix must be square and match base".into()));
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Usage("importance values must lie in [0, 1]".into()));
        }
        Ok(ImportanceMatrix {
            n,
            values: rows.into_iter().flatten().collect(),
            base,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        assert!(k < self.n && j < self.n, "importance index out of range");
        self.values[k * self.n + j]
    }

    pub fn base_activations(&self) -> &[f64] {
        &self.base
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n.max(1))
    }
}

/// `1 - masked / base`, clamped to `[0, 1]`; zero when the base is at or
/// below `epsilon`.
pub fn importance(base: f64, masked: f64, epsilon: f64) -> f64 {
    if base <= epsilon {
        0.0
    } else {
        let v = 1.0 - masked / base;
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, 1.0)
        }
    }
}

/// Builds the full n-by-n matrix with one base query and one masked query
/// per position.
pub fn importance_matrix<O: OracleBackend + ?Sized>(
    neuron: NeuronRef,
    tokens: &[Token],
    oracle: &O,
    cfg: &PipelineConfig,
) -> Result<ImportanceMatrix> {
    if tokens.is_empty() {
        return Err(Error::Usage("saliency needs at least one token".into()));
    }
    if !oracle.supports_masking() {
        return Err(Error::MaskingUnsupported);
    }
    let n = tokens.len();
    let base = oracle.activations(neuron, tokens)?;
    check_len(&base, n)?;
    let mut values = vec![0.0; n * n];
    for k in 0..n {
        let masked = oracle.masked_activations(neuron, tokens, k)?;
        check_len(&masked, n)?;
        for j in 0..n {
            values[k * n + j] = importance(base[j], masked[j], cfg.activation_epsilon);
        }
    }
    Ok(ImportanceMatrix { n, values, base })
}

fn check_len(acts: &[f64], n: usize) -> Result<()> {
    if acts.len() == n {
        Ok(())
    } else {
        Err(Error::Transport(format!(
            "backend returned {} activations for {n} tokens",
            acts.len()
        )))
    }
}
