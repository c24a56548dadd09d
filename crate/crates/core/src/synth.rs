// SPDX-License-Identifier: Apache-2.0

//! Seeded ground-truth corpora for synthetic neurons.

use std::ops::RangeInclusive;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationRecord, NeuronRef, Token};
use crate::oracle::{ContextAtom, Rule, SyntheticNeuronSpec, SYNTHETIC_MASK};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub neuron: NeuronRef,
    pub vocab: Vec<Token>,
    pub min_len: usize,
    pub max_len: usize,
    pub prompts: usize,
    /// Fraction of prompts that get one rule instance planted.
    pub plant_rate: f64,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() || self.vocab.iter().any(|t| t.as_str() == SYNTHETIC_MASK) {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must be non-empty and must not contain {SYNTHETIC_MASK}"
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.prompts == 0 {
            return Err(Error::InvalidConfig(
                "prompt lengths and count must be positive with min_len <= max_len".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.plant_rate) {
            return Err(Error::InvalidConfig(format!(
                "plant_rate must be in [0, 1], got {}",
                self.plant_rate
            )));
        }
        Ok(())
    }
}

/// Vocabulary `w0 .. w{n-1}`.
pub fn numbered_vocab(n: usize) -> Vec<Token> {
    (0..n)
        .map(|i| Token::new(format!("w{i}")).expect("non-empty"))
        .collect()
}

/// Random prompts from `cfg.vocab`, some with a planted rule instance, each
/// labelled with the spec's exact activations.
pub fn generate(spec: &SyntheticNeuronSpec, cfg: &CorpusConfig) -> Result<Vec<ActivationRecord>> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.prompts);
    for n in 0..cfg.prompts {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut tokens: Vec<Token> = (0..len)
            .map(|_| cfg.vocab.choose(&mut rng).expect("vocab non-empty").clone())
            .collect();
        if rng.random_bool(cfg.plant_rate) {
            let rule = spec.rules.choose(&mut rng).expect("spec has rules");
            let span = rule.context.len() + 1;
            if span > len {
                log::warn!("prompt {n}: rule needs {span} tokens but prompt has {len}, not planted");
            } else {
                let start = rng.random_range(0..=len - span);
                for (offset, atom) in rule.context.iter().enumerate() {
                    if let ContextAtom::Exact(t) = atom {
                        tokens[start + offset] = t.clone();
                    }
                }
                tokens[start + span - 1] = rule.activating.clone();
            }
        }
        let activations = spec.activations(&tokens);
        out.push(ActivationRecord::new(cfg.neuron, tokens, activations)?);
    }
    Ok(out)
}

/// Shape of randomly drawn synthetic neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecShape {
    pub rules: RangeInclusive<usize>,
    pub context_len: RangeInclusive<usize>,
    pub wildcard_rate: f64,
    /// Allow a wildcard as the earliest context atom. Such a rule also
    /// needs the prompt to be long enough, which a trie cannot express.
    pub leading_wildcards: bool,
    pub strength: RangeInclusive<f64>,
}

impl Default for SpecShape {
    fn default() -> Self {
        SpecShape {
            rules: 1..=3,
            context_len: 0..=4,
            wildcard_rate: 0.25,
            leading_wildcards: false,
            strength: 1.0..=2.0,
        }
    }
}

/// Draws a neuron whose rules have distinct activating tokens.
pub fn random_spec<R: Rng + ?Sized>(
    rng: &mut R,
    vocab: &[Token],
    shape: &SpecShape,
) -> Result<SyntheticNeuronSpec> {
    let n_rules = rng.random_range(shape.rules.clone());
    if n_rules == 0 || n_rules > vocab.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n_rules} rules with distinct activating tokens from {} tokens",
            vocab.len()
        )));
    }
    let mut activating: Vec<&Token> = vocab.iter().collect();
    activating.shuffle(rng);
    let rules = activating[..n_rules]
        .iter()
        .map(|&act| {
            let len = rng.random_range(shape.context_len.clone());
            let context = (0..len)
                .map(|pos| {
                    let wildcard_ok = pos > 0 || shape.leading_wildcards;
                    if wildcard_ok && rng.random_bool(shape.wildcard_rate) {
                        ContextAtom::Wildcard
                    } else {
                        ContextAtom::Exact(vocab.choose(rng).expect("vocab non-empty").clone())
                    }
                })
                .collect();
            Rule {
                activating: act.clone(),
                context,
                strength: rng.random_range(shape.strength.clone()),
            }
        })
        .collect();
    SyntheticNeuronSpec::new(rules)
}
