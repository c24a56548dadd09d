// SPDX-License-Identifier: Apache-2.0

//! Prompt pruning: keep only the shortest trailing context that still
//! drives the key token's activation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sentence_bounds, ActivationRecord, PipelineConfig, Token};
use crate::oracle::OracleBackend;

/// A contiguous slice of the original prompt ending at its key token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedPrompt {
    pub tokens: Vec<Token>,
    /// Always `tokens.len() - 1`.
    pub key_index: usize,
    /// Offset of `tokens[0]` within the original prompt.
    pub start: usize,
    pub original_activation: f64,
    pub pruned_activation: f64,
    /// False when even the full available prefix failed to reach the
    /// recovery fraction.
    pub recovered: bool,
    /// Oracle queries spent by the re-add loop.
    pub queries: usize,
}

/// Truncates `record` around its highest-activation token.
///
/// Everything after the sentence containing the key token is dropped, the
/// window is reduced to the key token alone, and prior tokens are re-added
/// one at a time until the key activation is back to at least
/// `recovery_fraction` of its original value.
pub fn prune<O: OracleBackend + ?Sized>(
    record: &ActivationRecord,
    oracle: &O,
    cfg: &PipelineConfig,
) -> Result<PrunedPrompt> {
    record.validate()?;
    let key = record.key_index().ok_or(Error::NoKeyToken)?;
    let original = record.activations[key];

    let sentence_end = sentence_bounds(&record.tokens)
        .into_iter()
        .find(|&b| b >= key)
        .unwrap_or(record.len() - 1);
    let region = &record.tokens[..=sentence_end];

    let target = cfg.recovery_fraction * original;
    let mut start = key;
    let mut queries = 0;
    let mut current = loop {
        let acts = oracle.activations(record.neuron, &region[start..=key])?;
        queries += 1;
        let a = *acts.last().ok_or_else(|| {
            Error::Transport("backend returned no activations".into())
        })?;
        if a >= target || start == 0 {
            break a;
        }
        start -= 1;
    };
    if !current.is_finite() {
        current = 0.0;
    }

    let tokens = region[start..=key].to_vec();
    Ok(PrunedPrompt {
        key_index: tokens.len() - 1,
        tokens,
        start,
        original_activation: original,
        pruned_activation: current,
        recovered: current >= target,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeuronRef;
    use crate::oracle::{ContextAtom, Rule, SyntheticNeuronSpec, SyntheticOracle};

    const N: NeuronRef = NeuronRef::new(0, 0);

    fn tok(t: &str) -> Token {
        Token::new(t).unwrap()
    }

    fn oracle(act: &str, ctx: &[&str], strength: f64) -> SyntheticOracle {
        let rule = Rule {
            activating: tok(act),
            context: ctx.iter().map(|c| ContextAtom::Exact(tok(c))).collect(),
            strength,
        };
        SyntheticOracle::new(N, SyntheticNeuronSpec::new(vec![rule]).unwrap())
    }

    fn record(o: &SyntheticOracle, words: &[&str]) -> ActivationRecord {
        let tokens = Token::seq(words).unwrap();
        let acts = o.activations(N, &tokens).unwrap();
        ActivationRecord::new(N, tokens, acts).unwrap()
    }

    #[test]
    fn re_adds_required_context() {
        let o = oracle(" except", &[" case"], 2.0);
        let r = record(&o, &["in", " case", " except", ".", " More", " text", "."]);
        let p = prune(&r, &o, &PipelineConfig::default()).unwrap();
        assert_eq!(p.tokens, Token::seq(&[" case", " except"]).unwrap());
        assert_eq!(p.key_index, 1);
        assert_eq!(p.start, 1);
        assert_eq!(p.original_activation, 2.0);
        assert_eq!(p.pruned_activation, 2.0);
        assert!(p.recovered);
        assert_eq!(p.queries, 2);
    }

    #[test]
    fn single_token_prompt() {
        let o = oracle("x", &[], 1.5);
        let r = record(&o, &["x"]);
        let p = prune(&r, &o, &PipelineConfig::default()).unwrap();
        assert_eq!(p.tokens, vec![tok("x")]);
        assert_eq!(p.pruned_activation, p.original_activation);
        assert_eq!(p.queries, 1);
    }

    #[test]
    fn three_token_context() {
        let o = oracle("k", &["a", "b", "c"], 1.0);
        let r = record(&o, &["z", "y", "a", "b", "c", "k", "w"]);
        let p = prune(&r, &o, &PipelineConfig::default()).unwrap();
        assert_eq!(p.tokens, Token::seq(&["a", "b", "c", "k"]).unwrap());
        assert_eq!(p.start, 2);
        assert_eq!(p.queries, 4);
    }

    #[test]
    fn unrecoverable_keeps_full_prefix() {
        // The backend disagrees with the recorded activation, so the loop
        // runs out of prefix.
        let o = oracle("k", &["a"], 1.0);
        let tokens = Token::seq(&["q", "r", "k"]).unwrap();
        let r = ActivationRecord::new(N, tokens, vec![0.0, 0.0, 3.0]).unwrap();
        let p = prune(&r, &o, &PipelineConfig::default()).unwrap();
        assert_eq!(p.start, 0);
        assert_eq!(p.tokens.len(), 3);
        assert!(!p.recovered);
        assert_eq!(p.queries, 3);
    }

    #[test]
    fn all_zero_record_has_no_key() {
        let o = oracle("k", &[], 1.0);
        let r = record(&o, &["a", "b"]);
        assert!(matches!(
            prune(&r, &o, &PipelineConfig::default()),
            Err(Error::NoKeyToken)
        ));
    }

    #[test]
    fn key_on_sentence_final_token() {
        let o = oracle(".", &["end"], 1.0);
        let r = record(&o, &["the", "end", ".", "next"]);
        let p = prune(&r, &o, &PipelineConfig::default()).unwrap();
        assert_eq!(p.tokens, Token::seq(&["end", "."]).unwrap());
    }
}
