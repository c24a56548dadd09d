// SPDX-License-Identifier: Apache-2.0

//! Token-level scoring of trie predictions against real activations.
//!
//! Firing tokens are rare, so precision, recall and F1 are reported twice:
//! once treating "fires" as the positive class and once treating "does not
//! fire" as positive. A predictor that never fires scores near-perfectly on
//! the second view and zero on the first.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivationRecord, NeuronRef, NormalizationContext};
use crate::trie::NeuronTrie;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FiringMask(pub Vec<bool>);

impl FiringMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn extend(&mut self, other: &FiringMask) {
        self.0.extend_from_slice(&other.0);
    }
}

/// `value >= threshold` marks a firing.
pub fn binarize(normalized: &[f64], threshold: f64) -> FiringMask {
    FiringMask(normalized.iter().map(|&v| v >= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Precision, recall and F1 for one class. A 0/0 ratio is reported as 0
/// and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            precision_undefined,
            recall_undefined,
        }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StratifiedScore {
    pub firing: ClassMetrics,
    pub non_firing: ClassMetrics,
    pub counts: Counts,
}

impl StratifiedScore {
    pub fn from_counts(counts: Counts) -> Self {
        StratifiedScore {
            firing: ClassMetrics::from_counts(counts.tp, counts.fp, counts.fn_),
            // the negative class: correct rejections are its true positives
            non_firing: ClassMetrics::from_counts(counts.tn, counts.fn_, counts.fp),
            counts,
        }
    }
}

pub fn score(pred: &FiringMask, truth: &FiringMask) -> Result<StratifiedScore> {
    if pred.len() != truth.len() {
        return Err(Error::Usage(format!(
            "prediction has {} tokens but ground truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = Counts::default();
    for (&p, &t) in pred.0.iter().zip(&truth.0) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(StratifiedScore::from_counts(c))
}

/// Unweighted mean of every metric (one vote per neuron); counts are summed
/// and a flag is raised if any input raised it.
pub fn aggregate(scores: &[StratifiedScore]) -> Result<StratifiedScore> {
    if scores.is_empty() {
        return Err(Error::Usage("cannot aggregate an empty list of scores".into()));
    }
    let n = scores.len() as f64;
    let mean = |get: fn(&StratifiedScore) -> &ClassMetrics| ClassMetrics {
        precision: scores.iter().map(|s| get(s).precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| get(s).recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| get(s).f1).sum::<f64>() / n,
        precision_undefined: scores.iter().any(|s| get(s).precision_undefined),
        recall_undefined: scores.iter().any(|s| get(s).recall_undefined),
    };
    Ok(StratifiedScore {
        firing: mean(|s| &s.firing),
        non_firing: mean(|s| &s.non_firing),
        counts: scores.iter().fold(Counts::default(), |acc, s| acc + s.counts),
    })
}

/// Metrics recomputed from the summed confusion counts.
pub fn pooled(scores: &[StratifiedScore]) -> Result<StratifiedScore> {
    if scores.is_empty() {
        return Err(Error::Usage("cannot pool an empty list of scores".into()));
    }
    Ok(StratifiedScore::from_counts(
        scores.iter().fold(Counts::default(), |acc, s| acc + s.counts),
    ))
}

/// Scores `trie` on held-out records, pooling every token of every record.
/// Ground truth is normalized with the trie's own training maximum.
pub fn evaluate(trie: &NeuronTrie, records: &[ActivationRecord]) -> Result<StratifiedScore> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no test records to evaluate".into()));
    }
    let ctx = NormalizationContext::new(trie.a_max())?;
    let threshold = trie.config().firing_threshold;
    let (mut pred, mut truth) = (FiringMask::default(), FiringMask::default());
    for record in records {
        let normalized = crate::model::normalize(record, &ctx)?;
        truth.extend(&binarize(&normalized, threshold));
        pred.extend(&binarize(&trie.predict(&record.tokens), threshold));
    }
    score(&pred, &truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronScore {
    pub neuron: NeuronRef,
    pub score: StratifiedScore,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "layer", "neuron", "tp", "fp", "fn", "tn", "P_fire", "R_fire", "F1_fire", "P_nofire",
    "R_nofire", "F1_nofire",
];

fn report_row(layer: String, neuron: String, s: &StratifiedScore) -> Vec<String> {
    let f = |v: f64| format!("{v:.6}");
    vec![
        layer,
        neuron,
        s.counts.tp.to_string(),
        s.counts.fp.to_string(),
        s.counts.fn_.to_string(),
        s.counts.tn.to_string(),
        f(s.firing.precision),
        f(s.firing.recall),
        f(s.firing.f1),
        f(s.non_firing.precision),
        f(s.non_firing.recall),
        f(s.non_firing.f1),
    ]
}

/// Writes one CSV row per neuron, then a `macro` and a `pooled` summary row
/// per layer.
pub fn write_report<W: Write>(writer: W, rows: &[NeuronScore]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_COLUMNS)?;
    for row in rows {
        w.write_record(report_row(
            row.neuron.layer.to_string(),
            row.neuron.index.to_string(),
            &row.score,
        ))?;
    }
    for (layer, scores) in by_layer(rows) {
        w.write_record(report_row(layer.to_string(), "macro".into(), &aggregate(&scores)?))?;
        w.write_record(report_row(layer.to_string(), "pooled".into(), &pooled(&scores)?))?;
    }
    w.flush()?;
    Ok(())
}

fn by_layer(rows: &[NeuronScore]) -> BTreeMap<u32, Vec<StratifiedScore>> {
    let mut layers: BTreeMap<u32, Vec<StratifiedScore>> = BTreeMap::new();
    for row in rows {
        layers.entry(row.neuron.layer).or_default().push(row.score);
    }
    layers
}

/// Plain-text table of macro-averaged metrics per layer, in the
/// firing / non-firing column layout.
pub fn summary_table(rows: &[NeuronScore]) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5} | {:^26} | {:^26}",
        "", "Firing Tokens", "Non-Firing Tokens"
    );
    let _ = writeln!(
        out,
        "{:>5} | {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8}",
        "Layer", "P", "R", "F1", "P", "R", "F1"
    );
    for (layer, scores) in by_layer(rows) {
        let s = aggregate(&scores)?;
        let _ = writeln!(
            out,
            "{:>5} | {:>8.2} {:>8.2} {:>8.2} | {:>8.2} {:>8.2} {:>8.2}",
            layer,
            s.firing.precision,
            s.firing.recall,
            s.firing.f1,
            s.non_firing.precision,
            s.non_firing.recall,
            s.non_firing.f1
        );
    }
    Ok(out)
}
