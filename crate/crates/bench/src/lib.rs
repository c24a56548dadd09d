// SPDX-License-Identifier: Apache-2.0

//! Seeded fixtures shared by the benchmarks.

use n2g_core::pipeline::{build_neuron, BuildOutput};
use n2g_core::synth::{generate, numbered_vocab, random_spec, CorpusConfig, SpecShape};
use n2g_core::{ActivationRecord, NeuronRef, NoSubstitutes, PipelineConfig, SyntheticOracle, Token};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NEURON: NeuronRef = NeuronRef::new(0, 0);

/// A synthetic neuron over `vocab` tokens and a labelled corpus for it.
pub struct Fixture {
    pub oracle: SyntheticOracle,
    pub records: Vec<ActivationRecord>,
    pub vocab: Vec<Token>,
}

pub fn fixture(seed: u64, vocab: usize, prompts: usize) -> Fixture {
    let vocab = numbered_vocab(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = SpecShape {
        rules: 3..=3,
        ..SpecShape::default()
    };
    let spec = random_spec(&mut rng, &vocab, &shape).expect("valid shape");
    let cfg = CorpusConfig {
        neuron: NEURON,
        vocab: vocab.clone(),
        min_len: 16,
        max_len: 64,
        prompts,
        plant_rate: 1.0,
        seed,
    };
    let records = generate(&spec, &cfg).expect("valid corpus config");
    Fixture {
        oracle: SyntheticOracle::new(NEURON, spec),
        records,
        vocab,
    }
}

impl Fixture {
    pub fn build(&self) -> BuildOutput {
        build_neuron(&self.records, NEURON, &self.oracle, &NoSubstitutes, &PipelineConfig::default())
            .expect("fixture builds")
    }

    /// Random prompts over the fixture vocabulary.
    pub fn prompts(&self, seed: u64, count: usize, len: usize) -> Vec<Vec<Token>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let n = rng.random_range(1..=len);
                (0..n).map(|_| self.vocab.choose(&mut rng).expect("non-empty").clone()).collect()
            })
            .collect()
    }
}
