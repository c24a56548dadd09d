// SPDX-License-Identifier: Apache-2.0

//! Domain types shared by every pipeline stage: tokens, neuron references,
//! activation records, normalization and configuration, plus the small
//! helpers (sentence segmentation, train/test split) that operate on them.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single token string exactly as the subject model's tokenizer emits it,
/// including any leading-space marker.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::InvalidToken("token text must be non-empty".into()));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Builds a token sequence from string slices, failing on the first empty one.
    pub fn seq<S: AsRef<str>>(texts: &[S]) -> Result<Vec<Token>> {
        texts.iter().map(|t| Token::new(t.as_ref())).collect()
    }
}

impl TryFrom<String> for Token {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Token::new(value)
    }
}

impl From<Token> for String {
    fn from(token: Token) -> String {
        token.0
    }
}

impl FromStr for Token {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Token::new(s)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Identifies the target neuron: a layer and a neuron index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronRef {
    pub layer: u32,
    pub index: u32,
}

impl NeuronRef {
    pub const fn new(layer: u32, index: u32) -> Self {
        NeuronRef { layer, index }
    }
}

impl fmt::Display for NeuronRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.index)
    }
}

impl FromStr for NeuronRef {
    type Err = Error;

    /// Parses `LAYER:INDEX`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Usage(format!("expected neuron as LAYER:INDEX, got {s:?}"));
        let (layer, index) = s.split_once(':').ok_or_else(bad)?;
        Ok(NeuronRef {
            layer: layer.trim().parse().map_err(|_| bad())?,
            index: index.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// One prompt together with the target neuron's raw activation on each token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRecord {
    pub neuron: NeuronRef,
    pub tokens: Vec<Token>,
    pub activations: Vec<f64>,
}

impl ActivationRecord {
    pub fn new(neuron: NeuronRef, tokens: Vec<Token>, activations: Vec<f64>) -> Result<Self> {
        let record = ActivationRecord {
            neuron,
            tokens,
            activations,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::InvalidRecord("record has no tokens".into()));
        }
        if self.tokens.len() != self.activations.len() {
            return Err(Error::InvalidRecord(format!(
                "{} tokens but {} activations",
                self.tokens.len(),
                self.activations.len()
            )));
        }
        if let Some(i) = self.activations.iter().position(|a| !a.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "activation {i} is not finite"
            )));
        }
        Ok(())
    }

    /// Index of the highest activation, earliest on ties, if any is strictly positive.
    pub fn key_index(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &a) in self.activations.iter().enumerate() {
            if a > 0.0 && best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Reads JSONL activation records, skipping blank lines.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<ActivationRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ActivationRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidRecord(format!("line {}: {e}", lineno + 1))
        })?;
        record
            .validate()
            .map_err(|e| Error::InvalidRecord(format!("line {}: {e}", lineno + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut writer: W, records: &[ActivationRecord]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Holds `a_max`, the largest raw activation over the training records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationContext {
    a_max: f64,
}

impl NormalizationContext {
    pub fn new(a_max: f64) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "a_max must be positive and finite, got {a_max}"
            )));
        }
        Ok(NormalizationContext { a_max })
    }

    pub fn from_records(records: &[ActivationRecord]) -> Result<Self> {
        let a_max = records
            .iter()
            .flat_map(|r| r.activations.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max);
        if a_max.is_nan() || a_max <= 0.0 {
            return Err(Error::InsufficientData(
                "no training record has a positive activation".into(),
            ));
        }
        NormalizationContext::new(a_max)
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn normalize_value(&self, raw: f64) -> f64 {
        (raw.max(0.0) / self.a_max).clamp(0.0, 1.0)
    }

    pub fn normalize_values(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|&a| self.normalize_value(a)).collect()
    }
}

/// Scales a record's activations into `[0, 1]` by the training maximum.
/// Negative activations floor at 0 and values above `a_max` cap at 1.
pub fn normalize(record: &ActivationRecord, ctx: &NormalizationContext) -> Result<Vec<f64>> {
    record.validate()?;
    Ok(ctx.normalize_values(&record.activations))
}

/// Tunable thresholds for every pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Fraction of the key-token activation the pruned prompt must retain.
    pub recovery_fraction: f64,
    /// Normalized activation at which a token becomes an activating trie node.
    pub activation_threshold: f64,
    /// Importance at which a context token is kept rather than ignored.
    pub importance_threshold: f64,
    /// Normalized activation at which a token counts as firing in evaluation.
    pub firing_threshold: f64,
    pub top_n_substitutes: usize,
    pub substitute_prob_min: f64,
    /// Base activations at or below this are treated as zero by saliency.
    pub activation_epsilon: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            recovery_fraction: 0.5,
            activation_threshold: 0.5,
            importance_threshold: 0.75,
            firing_threshold: 0.5,
            top_n_substitutes: 5,
            substitute_prob_min: 0.1,
            activation_epsilon: 1e-6,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        unit("recovery_fraction", self.recovery_fraction)?;
        unit("activation_threshold", self.activation_threshold)?;
        unit("importance_threshold", self.importance_threshold)?;
        unit("firing_threshold", self.firing_threshold)?;
        if self.top_n_substitutes == 0 {
            return Err(Error::InvalidConfig("top_n_substitutes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.substitute_prob_min) {
            return Err(Error::InvalidConfig(format!(
                "substitute_prob_min must be in [0, 1), got {}",
                self.substitute_prob_min
            )));
        }
        if !(self.activation_epsilon.is_finite() && self.activation_epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "activation_epsilon must be a small positive number, got {}",
                self.activation_epsilon
            )));
        }
        Ok(())
    }
}

/// Seeded random split: the first `ceil(n/2)` shuffled items go to train.
/// Both halves keep the input order of their members.
pub fn split_train_test<T: Clone>(records: &[T], seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 records to split, got {}",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = records.len().div_ceil(2);
    let mut in_train = vec![false; records.len()];
    for &i in &order[..n_train] {
        in_train[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::new());
    for (record, is_train) in records.iter().zip(in_train) {
        if is_train {
            train.push(record.clone());
        } else {
            test.push(record.clone());
        }
    }
    Ok((train, test))
}

/// Indices of sentence-final tokens: any token containing `.`, `!`, `?` or a newline.
pub fn sentence_bounds(tokens: &[Token]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.as_str().contains(['.', '!', '?', '\n']))
        .map(|(i, _)| i)
        .collect()
}
