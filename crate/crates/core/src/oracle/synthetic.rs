// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{OracleBackend, SYNTHETIC_MASK};
use crate::error::{Error, Result};
use crate::model::{NeuronRef, Token};

/// One position of a rule's required context.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ContextAtom {
    Exact(Token),
    /// Matches any token, including the mask token.
    Wildcard,
}

impl ContextAtom {
    pub fn matches(&self, token: &Token) -> bool {
        match self {
            ContextAtom::Exact(t) => t == token,
            ContextAtom::Wildcard => true,
        }
    }
}

// "*" is the wildcard; a leading backslash escapes a literal token.
impl Serialize for ContextAtom {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ContextAtom::Wildcard => s.serialize_str("*"),
            ContextAtom::Exact(t) if t.as_str() == "*" || t.as_str().starts_with('\\') => {
                s.serialize_str(&format!("\\{t}"))
            }
            ContextAtom::Exact(t) => s.serialize_str(t.as_str()),
        }
    }
}

impl<'de> Deserialize<'de> for ContextAtom {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        if raw == "*" {
            return Ok(ContextAtom::Wildcard);
        }
        let text = raw.strip_prefix('\\').unwrap_or(&raw);
        Token::new(text)
            .map(ContextAtom::Exact)
            .map_err(serde::de::Error::custom)
    }
}

/// Fires with `strength` on `activating` when the preceding tokens match
/// `context`. The context is written in text order: its last atom must sit
/// immediately before the activating token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub activating: Token,
    pub context: Vec<ContextAtom>,
    pub strength: f64,
}

impl Rule {
    pub fn matches_at(&self, tokens: &[Token], i: usize) -> bool {
        if tokens[i] != self.activating || self.context.len() > i {
            return false;
        }
        let start = i - self.context.len();
        self.context
            .iter()
            .zip(&tokens[start..i])
            .all(|(atom, tok)| atom.matches(tok))
    }
}

/// A rule-defined ground-truth neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNeuronSpec {
    pub rules: Vec<Rule>,
}

impl SyntheticNeuronSpec {
    pub fn new(rules: Vec<Rule>) -> Result<Self> {
        let spec = SyntheticNeuronSpec { rules };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::InvalidConfig("synthetic neuron needs at least one rule".into()));
        }
        for (n, rule) in self.rules.iter().enumerate() {
            if !(rule.strength.is_finite() && rule.strength > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "rule {n}: strength must be positive, got {}",
                    rule.strength
                )));
            }
            let uses_mask = rule.activating.as_str() == SYNTHETIC_MASK
                || rule
                    .context
                    .iter()
                    .any(|a| matches!(a, ContextAtom::Exact(t) if t.as_str() == SYNTHETIC_MASK));
            if uses_mask {
                return Err(Error::InvalidConfig(format!(
                    "rule {n}: {SYNTHETIC_MASK} is reserved for masking"
                )));
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let spec: SyntheticNeuronSpec = serde_json::from_reader(reader)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn activations(&self, tokens: &[Token]) -> Vec<f64> {
        (0..tokens.len())
            .map(|i| synthetic_activation(self, tokens, i))
            .collect()
    }
}

/// Strongest matching rule's strength at position `i`, or 0.
pub fn synthetic_activation(spec: &SyntheticNeuronSpec, tokens: &[Token], i: usize) -> f64 {
    spec.rules
        .iter()
        .filter(|r| r.matches_at(tokens, i))
        .map(|r| r.strength)
        .fold(0.0, f64::max)
}

/// Serves one or more synthetic neurons through the oracle interface.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    neurons: BTreeMap<NeuronRef, SyntheticNeuronSpec>,
    mask: Token,
}

impl SyntheticOracle {
    pub fn new(neuron: NeuronRef, spec: SyntheticNeuronSpec) -> Self {
        let mut neurons = BTreeMap::new();
        neurons.insert(neuron, spec);
        SyntheticOracle {
            neurons,
            mask: Token::new(SYNTHETIC_MASK).expect("mask literal is non-empty"),
        }
    }

    pub fn insert(&mut self, neuron: NeuronRef, spec: SyntheticNeuronSpec) {
        self.neurons.insert(neuron, spec);
    }

    pub fn spec(&self, neuron: NeuronRef) -> Option<&SyntheticNeuronSpec> {
        self.neurons.get(&neuron)
    }
}

impl OracleBackend for SyntheticOracle {
    fn mask_token(&self) -> &Token {
        &self.mask
    }

    fn activations(&self, neuron: NeuronRef, tokens: &[Token]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::Usage("activation query needs at least one token".into()));
        }
        let spec = self.neurons.get(&neuron).ok_or(Error::NeuronNotFound {
            layer: neuron.layer,
            index: neuron.index,
        })?;
        Ok(spec.activations(tokens))
    }
}
