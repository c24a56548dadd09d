// SPDX-License-Identifier: Apache-2.0

//! Prompt augmentation by single-token substitution.
//!
//! Each context position that matters for the key token is replaced in turn
//! by the substitution model's most likely alternatives, and each variant is
//! re-measured so the trie sees contexts beyond the original examples.

use std::collections::{BTreeMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NeuronRef, NormalizationContext, PipelineConfig, Token};
use crate::oracle::{substitute, OracleBackend};
use crate::pruner::PrunedPrompt;
use crate::saliency::{importance_matrix, ImportanceMatrix};

/// Proposes replacement tokens for one position of a prompt, typically from
/// a masked language model.
pub trait SubstitutionProvider: Send + Sync {
    /// Raw candidates for `tokens[position]`, at most `top_n` of them.
    fn candidates(&self, tokens: &[Token], position: usize, top_n: usize) -> Result<Vec<(Token, f64)>>;
}

impl<P: SubstitutionProvider + ?Sized> SubstitutionProvider for &P {
    fn candidates(&self, tokens: &[Token], position: usize, top_n: usize) -> Result<Vec<(Token, f64)>> {
        (**self).candidates(tokens, position, top_n)
    }
}

/// Provider that never proposes anything; disables augmentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSubstitutes;

impl SubstitutionProvider for NoSubstitutes {
    fn candidates(&self, _: &[Token], _: usize, _: usize) -> Result<Vec<(Token, f64)>> {
        Ok(Vec::new())
    }
}

/// Fixed lookup table keyed by the token being replaced, ignoring context.
///
/// File form is a JSON object mapping a token to `[token, prob]` pairs:
/// `{"case": [["cases", 0.4], ["point", 0.05]]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TableProvider {
    table: BTreeMap<Token, Vec<(Token, f64)>>,
}

impl TableProvider {
    pub fn new(table: BTreeMap<Token, Vec<(Token, f64)>>) -> Self {
        TableProvider { table }
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let provider: TableProvider = serde_json::from_reader(reader)?;
        for (from, cands) in &provider.table {
            if let Some((_, p)) = cands.iter().find(|(_, p)| !(*p > 0.0 && *p <= 1.0)) {
                return Err(Error::Format(format!(
                    "substitute probability for {from:?} must be in (0, 1], got {p}"
                )));
            }
        }
        Ok(provider)
    }
}

impl SubstitutionProvider for TableProvider {
    fn candidates(&self, tokens: &[Token], position: usize, top_n: usize) -> Result<Vec<(Token, f64)>> {
        let mut cands = self.table.get(&tokens[position]).cloned().unwrap_or_default();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1));
        cands.truncate(top_n);
        Ok(cands)
    }
}

/// Accepted substitutes for `tokens[position]`: at most `n`, each at least
/// `p_min` likely, sorted by descending probability, never the original
/// token.
pub fn substitutes<P: SubstitutionProvider + ?Sized>(
    provider: &P,
    tokens: &[Token],
    position: usize,
    n: usize,
    p_min: f64,
) -> Result<Vec<(Token, f64)>> {
    if position >= tokens.len() {
        return Err(Error::Usage(format!(
            "position {position} out of range for {} tokens",
            tokens.len()
        )));
    }
    let original = &tokens[position];
    let mut seen = HashSet::new();
    let mut out: Vec<(Token, f64)> = provider
        .candidates(tokens, position, n)?
        .into_iter()
        .filter(|(t, p)| t != original && *p >= p_min && *p > 0.0 && *p <= 1.0)
        .filter(|(t, _)| seen.insert(t.clone()))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out.truncate(n);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented { position: usize, substitute: Token },
}

/// A prompt ready for trie building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedExample {
    /// Index of the training record this example descends from.
    pub source: usize,
    pub tokens: Vec<Token>,
    pub normalized: Vec<f64>,
    pub importance: ImportanceMatrix,
    pub provenance: Provenance,
}

impl ProcessedExample {
    pub fn new(
        tokens: Vec<Token>,
        normalized: Vec<f64>,
        importance: ImportanceMatrix,
        provenance: Provenance,
    ) -> Result<Self> {
        let ex = ProcessedExample {
            source: 0,
            tokens,
            normalized,
            importance,
            provenance,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.normalized.len() != n || self.importance.len() != n {
            return Err(Error::InvalidRecord(format!(
                "example has {n} tokens, {} activations and a {}x{} importance matrix",
                self.normalized.len(),
                self.importance.len(),
                self.importance.len()
            )));
        }
        if self.normalized.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidRecord("normalized activations must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Returns the pruned prompt itself followed by one variant per accepted
/// substitute of every important context position.
///
/// `imp` must be the importance matrix of `pruned.tokens`. Variants are
/// ordered by position, then by provider rank, and are emitted even when
/// the substitution kills the activation.
#[allow(clippy::too_many_arguments)]
pub fn augment<O, P>(
    neuron: NeuronRef,
    pruned: &PrunedPrompt,
    imp: &ImportanceMatrix,
    provider: &P,
    oracle: &O,
    ctx: &NormalizationContext,
    cfg: &PipelineConfig,
) -> Result<Vec<ProcessedExample>>
where
    O: OracleBackend + ?Sized,
    P: SubstitutionProvider + ?Sized,
{
    if imp.len() != pruned.tokens.len() {
        return Err(Error::Usage(
            "importance matrix does not match the pruned prompt".into(),
        ));
    }
    let key = pruned.key_index;
    let mut out = vec![ProcessedExample::new(
        pruned.tokens.clone(),
        ctx.normalize_values(imp.base_activations()),
        imp.clone(),
        Provenance::Original,
    )?];

    for position in (0..pruned.tokens.len()).filter(|&p| p != key) {
        if imp.get(position, key) < cfg.importance_threshold {
            continue;
        }
        let accepted = substitutes(
            provider,
            &pruned.tokens,
            position,
            cfg.top_n_substitutes,
            cfg.substitute_prob_min,
        )?;
        for (substitute_token, _) in accepted {
            let variant = substitute(&pruned.tokens, position, &substitute_token)?;
            let variant_imp = importance_matrix(neuron, &variant, oracle, cfg)?;
            out.push(ProcessedExample::new(
                variant,
                ctx.normalize_values(variant_imp.base_activations()),
                variant_imp,
                Provenance::Augmented {
                    position,
                    substitute: substitute_token,
                },
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ContextAtom, CountingOracle, Rule, SyntheticNeuronSpec, SyntheticOracle};
    use crate::pruner::prune;
    use crate::model::ActivationRecord;

    const N: NeuronRef = NeuronRef::new(0, 0);

    fn tok(t: &str) -> Token {
        Token::new(t).unwrap()
    }

    fn table(entries: &[(&str, &[(&str, f64)])]) -> TableProvider {
        TableProvider::new(
            entries
                .iter()
                .map(|(k, v)| (tok(k), v.iter().map(|(t, p)| (tok(t), *p)).collect()))
                .collect(),
        )
    }

    #[test]
    fn substitute_filtering() {
        let provider = table(&[("case", &[("cases", 0.4), ("point", 0.05)])]);
        let tokens = Token::seq(&["case", "except"]).unwrap();
        assert_eq!(
            substitutes(&provider, &tokens, 0, 5, 0.1).unwrap(),
            vec![(tok("cases"), 0.4)]
        );
        assert!(substitutes(&provider, &tokens, 0, 5, 0.5).unwrap().is_empty());

        let provider = table(&[("x", &[("a", 0.3), ("b", 0.2)])]);
        let tokens = Token::seq(&["x"]).unwrap();
        assert_eq!(substitutes(&provider, &tokens, 0, 1, 0.1).unwrap(), vec![(tok("a"), 0.3)]);
        assert!(matches!(
            substitutes(&provider, &tokens, 1, 1, 0.1),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn substitutes_drop_original_and_sort() {
        let provider = table(&[("x", &[("b", 0.2), ("x", 0.9), ("a", 0.3), ("b", 0.15)])]);
        let tokens = Token::seq(&["x"]).unwrap();
        assert_eq!(
            substitutes(&provider, &tokens, 0, 5, 0.1).unwrap(),
            vec![(tok("a"), 0.3), (tok("b"), 0.2)]
        );
    }

    fn setup(ctx_words: &[&str]) -> (CountingOracle<SyntheticOracle>, PrunedPrompt, ImportanceMatrix) {
        let rules = ctx_words
            .iter()
            .map(|c| Rule {
                activating: tok("except"),
                context: vec![ContextAtom::Exact(tok(c))],
                strength: 2.0,
            })
            .collect();
        let oracle = CountingOracle::new(SyntheticOracle::new(N, SyntheticNeuronSpec::new(rules).unwrap()));
        let tokens = Token::seq(&["case", "except"]).unwrap();
        let acts = oracle.activations(N, &tokens).unwrap();
        let record = ActivationRecord::new(N, tokens, acts).unwrap();
        let cfg = PipelineConfig::default();
        let pruned = prune(&record, &oracle, &cfg).unwrap();
        let imp = importance_matrix(N, &pruned.tokens, &oracle, &cfg).unwrap();
        oracle.reset();
        (oracle, pruned, imp)
    }

    #[test]
    fn variant_keeps_firing() {
        let (oracle, pruned, imp) = setup(&["case", "cases"]);
        let provider = table(&[("case", &[("cases", 0.4), ("point", 0.05)])]);
        let ctx = NormalizationContext::new(2.0).unwrap();
        let out = augment(N, &pruned, &imp, &provider, &oracle, &ctx, &PipelineConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].provenance, Provenance::Original);
        assert_eq!(out[0].normalized, vec![0.0, 1.0]);
        assert_eq!(out[1].tokens, Token::seq(&["cases", "except"]).unwrap());
        assert_eq!(out[1].normalized, vec![0.0, 1.0]);
        assert_eq!(
            out[1].provenance,
            Provenance::Augmented {
                position: 0,
                substitute: tok("cases")
            }
        );
        // one base query plus one masked query per token for the variant
        assert_eq!(oracle.queries(), 1 + 2);
    }

    #[test]
    fn variant_breaking_rule_is_still_emitted() {
        let (oracle, pruned, imp) = setup(&["case"]);
        let provider = table(&[("case", &[("point", 0.6)])]);
        let ctx = NormalizationContext::new(2.0).unwrap();
        let out = augment(N, &pruned, &imp, &provider, &oracle, &ctx, &PipelineConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].normalized[1], 0.0);
    }

    #[test]
    fn nothing_important_means_no_variants() {
        let rule = Rule {
            activating: tok("except"),
            context: vec![ContextAtom::Wildcard],
            strength: 2.0,
        };
        let oracle = SyntheticOracle::new(N, SyntheticNeuronSpec::new(vec![rule]).unwrap());
        let tokens = Token::seq(&["case", "except"]).unwrap();
        let acts = oracle.activations(N, &tokens).unwrap();
        let cfg = PipelineConfig::default();
        let pruned = prune(&ActivationRecord::new(N, tokens, acts).unwrap(), &oracle, &cfg).unwrap();
        let imp = importance_matrix(N, &pruned.tokens, &oracle, &cfg).unwrap();
        let provider = table(&[("case", &[("cases", 0.9)])]);
        let ctx = NormalizationContext::new(2.0).unwrap();
        let out = augment(N, &pruned, &imp, &provider, &oracle, &ctx, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].provenance, Provenance::Original);
    }

    #[test]
    fn table_file_format() {
        let json = r#"{"case": [["cases", 0.4], ["point", 0.05]]}"#;
        let provider = TableProvider::from_reader(json.as_bytes()).unwrap();
        let tokens = Token::seq(&["case"]).unwrap();
        assert_eq!(provider.candidates(&tokens, 0, 5).unwrap().len(), 2);
        assert!(TableProvider::from_reader(r#"{"a": [["b", 1.5]]}"#.as_bytes()).is_err());
    }
}
