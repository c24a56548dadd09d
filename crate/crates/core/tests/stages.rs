// SPDX-License-Identifier: Apache-2.0

//! Randomized checks of the prune and saliency stages against synthetic
//! neurons, where the right answer is known from the rule set.

use n2g_core::model::{ActivationRecord, NeuronRef, PipelineConfig, Token};
use n2g_core::oracle::{ContextAtom, CountingOracle, OracleBackend, SyntheticNeuronSpec, SyntheticOracle};
use n2g_core::pruner::prune;
use n2g_core::saliency::importance_matrix;
use n2g_core::synth::{generate, numbered_vocab, random_spec, CorpusConfig, SpecShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: NeuronRef = NeuronRef::new(2, 7);

fn draw(seed: u64, shape: &SpecShape) -> (SyntheticNeuronSpec, ActivationRecord) {
    let vocab = numbered_vocab(12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = random_spec(&mut rng, &vocab, shape).unwrap();
    let cfg = CorpusConfig {
        neuron: N,
        vocab,
        min_len: 1,
        max_len: 14,
        prompts: 1,
        plant_rate: 0.8,
        seed,
    };
    let record = generate(&spec, &cfg).unwrap().remove(0);
    (spec, record)
}

fn any_shape() -> SpecShape {
    SpecShape {
        leading_wildcards: true,
        wildcard_rate: 0.3,
        ..SpecShape::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prune_contract(seed in any::<u64>()) {
        let (spec, record) = draw(seed, &any_shape());
        prop_assume!(record.key_index().is_some());
        let oracle = CountingOracle::new(SyntheticOracle::new(N, spec));
        let cfg = PipelineConfig::default();
        let p = prune(&record, &oracle, &cfg).unwrap();

        let key = record.key_index().unwrap();
        prop_assert_eq!(p.key_index, p.tokens.len() - 1);
        prop_assert_eq!(p.start + p.key_index, key);
        prop_assert_eq!(&record.tokens[p.start..=key], &p.tokens[..]);
        prop_assert!(oracle.queries() <= record.len());
        prop_assert_eq!(oracle.queries(), p.queries);
        prop_assert!(
            p.pruned_activation >= cfg.recovery_fraction * p.original_activation
                || (p.start == 0 && !p.recovered)
        );
        // synthetic neurons are local, so the full prefix always recovers
        prop_assert!(p.recovered);
    }

    #[test]
    fn prune_is_idempotent_for_single_rule_neurons(seed in any::<u64>()) {
        let shape = SpecShape { rules: 1..=1, ..any_shape() };
        let (spec, record) = draw(seed, &shape);
        prop_assume!(record.key_index().is_some());
        let oracle = SyntheticOracle::new(N, spec);
        let cfg = PipelineConfig::default();
        let first = prune(&record, &oracle, &cfg).unwrap();
        let acts = oracle.activations(N, &first.tokens).unwrap();
        let again = ActivationRecord::new(N, first.tokens.clone(), acts).unwrap();
        let second = prune(&again, &oracle, &cfg).unwrap();
        prop_assert_eq!(second.tokens, first.tokens);
        prop_assert_eq!(second.start, 0);
    }

    #[test]
    fn saliency_shape_and_range(seed in any::<u64>()) {
        let (spec, record) = draw(seed, &any_shape());
        let oracle = CountingOracle::new(SyntheticOracle::new(N, spec));
        let cfg = PipelineConfig::default();
        let m = importance_matrix(N, &record.tokens, &oracle, &cfg).unwrap();
        let n = record.len();
        prop_assert_eq!(m.len(), n);
        prop_assert_eq!(oracle.queries(), n + 1);
        for j in 0..n {
            let silent = record.activations[j] <= cfg.activation_epsilon;
            for k in 0..n {
                let v = m.get(k, j);
                prop_assert!(v.is_finite() && (0.0..=1.0).contains(&v));
                if silent {
                    prop_assert_eq!(v, 0.0);
                }
                // causal backend: later tokens never matter
                if k > j {
                    prop_assert_eq!(v, 0.0);
                }
            }
        }
    }
}

/// Planted single-match case: exact context positions score 1, wildcard
/// positions 0.
#[test]
fn exact_context_is_fully_important_and_wildcards_are_not() {
    let vocab = numbered_vocab(50);
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 500 {
        seed += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(
            &mut rng,
            &vocab,
            &SpecShape {
                context_len: 1..=4,
                wildcard_rate: 0.4,
                leading_wildcards: true,
                ..SpecShape::default()
            },
        )
        .unwrap();
        let cfg = CorpusConfig {
            neuron: N,
            vocab: vocab.clone(),
            min_len: 5,
            max_len: 12,
            prompts: 1,
            plant_rate: 1.0,
            seed,
        };
        let record = generate(&spec, &cfg).unwrap().remove(0);
        let key = record.key_index().unwrap();
        let rule = spec
            .rules
            .iter()
            .find(|r| r.matches_at(&record.tokens, key))
            .unwrap();
        let oracle = SyntheticOracle::new(N, spec.clone());
        let m = importance_matrix(N, &record.tokens, &oracle, &PipelineConfig::default()).unwrap();
        let start = key - rule.context.len();
        for (offset, atom) in rule.context.iter().enumerate() {
            let expected = match atom {
                ContextAtom::Exact(_) => 1.0,
                ContextAtom::Wildcard => 0.0,
            };
            assert_eq!(m.get(start + offset, key), expected, "seed {seed}");
        }
        assert_eq!(m.get(key, key), 1.0);
        checked += 1;
    }
}

#[test]
fn mask_token_is_reserved() {
    let oracle = SyntheticOracle::new(N, random_spec(&mut ChaCha8Rng::seed_from_u64(1), &numbered_vocab(5), &SpecShape::default()).unwrap());
    assert_eq!(oracle.mask_token(), &Token::new("<MASK>").unwrap());
}
