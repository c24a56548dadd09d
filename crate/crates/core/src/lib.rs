// SPDX-License-Identifier: Apache-2.0

//! Neuron-to-graph distillation.
//!
//! Takes a language-model neuron and the prompts it fires most strongly on,
//! and distills its behaviour into a [`NeuronTrie`]: an executable,
//! inspectable set of token contexts that predicts where the neuron fires.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`pruner`] cuts each prompt down to the context the key token needs.
//! 2. [`saliency`] measures, by masking, which tokens each activation
//!    depends on.
//! 3. [`augment`] swaps important tokens for likely alternatives to widen
//!    coverage.
//! 4. [`trie`] builds the context trie and runs it over new text.
//! 5. [`viz`] condenses the trie into a layered graph and renders DOT.
//! 6. [`eval`] scores predictions against real activations.
//!
//! Activations come from an [`OracleBackend`]: either the rule-driven
//! [`SyntheticOracle`] or a remote model server.

pub mod augment;
pub mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod pipeline;
pub mod pruner;
pub mod saliency;
pub mod synth;
pub mod trie;
pub mod viz;

pub use augment::{NoSubstitutes, ProcessedExample, Provenance, SubstitutionProvider, TableProvider};
pub use error::{Error, Result};
pub use eval::{FiringMask, StratifiedScore};
pub use model::{
    ActivationRecord, NeuronRef, NormalizationContext, PipelineConfig, Token,
};
pub use oracle::{OracleBackend, RemoteOracle, SyntheticNeuronSpec, SyntheticOracle};
pub use pruner::PrunedPrompt;
pub use saliency::ImportanceMatrix;
pub use trie::NeuronTrie;
pub use viz::CondensedGraph;
