// SPDX-License-Identifier: Apache-2.0

//! End-to-end build for one neuron: prune, measure saliency, augment and
//! insert every training record into a trie, keeping per-record query
//! accounting.

use serde::{Deserialize, Serialize};

use crate::augment::{augment, ProcessedExample, Provenance, SubstitutionProvider};
use crate::error::{Error, Result};
use crate::model::{ActivationRecord, NeuronRef, NormalizationContext, PipelineConfig};
use crate::oracle::{CountingOracle, OracleBackend};
use crate::pruner::prune;
use crate::saliency::importance_matrix;
use crate::trie::NeuronTrie;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLog {
    pub record: usize,
    pub tokens: usize,
    pub pruned_tokens: usize,
    pub recovered: bool,
    pub prune_queries: usize,
    pub saliency_queries: usize,
    pub variants: usize,
    pub augment_queries: usize,
    /// Upper bound on queries for this record: the prune loop, one base and
    /// one masked query per pruned token, and the same again per variant.
    pub query_bound: usize,
}

impl RecordLog {
    pub fn total_queries(&self) -> usize {
        self.prune_queries + self.saliency_queries + self.augment_queries
    }

    pub fn within_bound(&self) -> bool {
        self.total_queries() <= self.query_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub record: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLog {
    pub neuron: NeuronRef,
    pub a_max: f64,
    pub records: Vec<RecordLog>,
    pub skipped: Vec<SkippedRecord>,
    pub examples: usize,
    pub augmented_examples: usize,
    pub trie_nodes: usize,
    pub prune_queries: usize,
    pub saliency_queries: usize,
    pub augment_queries: usize,
    pub total_queries: usize,
    pub within_query_bound: bool,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub trie: NeuronTrie,
    pub examples: Vec<ProcessedExample>,
    pub log: BuildLog,
}

/// Outcome of processing a single training record.
pub type RecordOutcome = Result<Option<(Vec<ProcessedExample>, RecordLog)>>;

/// Prunes, scores and augments one record. Records without a positive
/// activation yield `Ok(None)`.
pub fn process_record<O, P>(
    index: usize,
    record: &ActivationRecord,
    oracle: &O,
    provider: &P,
    ctx: &NormalizationContext,
    cfg: &PipelineConfig,
) -> RecordOutcome
where
    O: OracleBackend + ?Sized,
    P: SubstitutionProvider + ?Sized,
{
    if record.key_index().is_none() {
        return Ok(None);
    }
    let counter = CountingOracle::new(oracle);
    let neuron = record.neuron;

    let pruned = prune(record, &counter, cfg)?;
    let prune_queries = counter.reset();

    let imp = importance_matrix(neuron, &pruned.tokens, &counter, cfg)?;
    let saliency_queries = counter.reset();

    let mut examples = augment(neuron, &pruned, &imp, provider, &counter, ctx, cfg)?;
    let augment_queries = counter.reset();
    for ex in &mut examples {
        ex.source = index;
    }

    let variants = examples
        .iter()
        .filter(|e| matches!(e.provenance, Provenance::Augmented { .. }))
        .count();
    let m = pruned.tokens.len();
    let log = RecordLog {
        record: index,
        tokens: record.len(),
        pruned_tokens: m,
        recovered: pruned.recovered,
        prune_queries,
        saliency_queries,
        variants,
        augment_queries,
        query_bound: record.len() + (1 + m) + variants * (1 + m),
    };
    Ok(Some((examples, log)))
}

/// Builds the trie from per-record outcomes, in record order.
pub fn assemble(
    neuron: NeuronRef,
    ctx: &NormalizationContext,
    cfg: &PipelineConfig,
    outcomes: Vec<(usize, RecordOutcome)>,
) -> Result<BuildOutput> {
    let mut examples = Vec::new();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (index, outcome) in outcomes {
        match outcome? {
            Some((exs, log)) => {
                examples.extend(exs);
                records.push(log);
            }
            None => skipped.push(SkippedRecord {
                record: index,
                reason: "no positive activation".into(),
            }),
        }
    }
    let trie = NeuronTrie::build(&examples, neuron, ctx, cfg)?;
    let sum = |f: fn(&RecordLog) -> usize| records.iter().map(f).sum::<usize>();
    let log = BuildLog {
        neuron,
        a_max: ctx.a_max(),
        examples: examples.len(),
        augmented_examples: examples
            .iter()
            .filter(|e| matches!(e.provenance, Provenance::Augmented { .. }))
            .count(),
        trie_nodes: trie.node_count(),
        prune_queries: sum(|r| r.prune_queries),
        saliency_queries: sum(|r| r.saliency_queries),
        augment_queries: sum(|r| r.augment_queries),
        total_queries: sum(RecordLog::total_queries),
        within_query_bound: records.iter().all(RecordLog::within_bound),
        records,
        skipped,
    };
    Ok(BuildOutput {
        trie,
        examples,
        log,
    })
}

/// Checks that every record belongs to `neuron` and derives `a_max`.
pub fn prepare(
    train: &[ActivationRecord],
    neuron: NeuronRef,
    cfg: &PipelineConfig,
) -> Result<NormalizationContext> {
    cfg.validate()?;
    if let Some(r) = train.iter().find(|r| r.neuron != neuron) {
        return Err(Error::Usage(format!(
            "record for neuron {} passed to a build for neuron {neuron}",
            r.neuron
        )));
    }
    NormalizationContext::from_records(train)
}

/// Sequential build over `train`.
pub fn build_neuron<O, P>(
    train: &[ActivationRecord],
    neuron: NeuronRef,
    oracle: &O,
    provider: &P,
    cfg: &PipelineConfig,
) -> Result<BuildOutput>
where
    O: OracleBackend + ?Sized,
    P: SubstitutionProvider + ?Sized,
{
    let ctx = prepare(train, neuron, cfg)?;
    let outcomes = train
        .iter()
        .enumerate()
        .map(|(i, r)| (i, process_record(i, r, oracle, provider, &ctx, cfg)))
        .collect();
    assemble(neuron, &ctx, cfg, outcomes)
}
