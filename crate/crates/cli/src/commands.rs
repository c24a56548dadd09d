// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use n2g_core::eval::{evaluate, summary_table, write_report, NeuronScore};
use n2g_core::model::{read_records, split_train_test, write_records};
use n2g_core::pipeline::{assemble, prepare, process_record, BuildLog};
use n2g_core::synth::{generate, numbered_vocab, CorpusConfig};
use n2g_core::viz::{bottleneck_tokens, condense, emit_dot, subgraph_components};
use n2g_core::{
    ActivationRecord, Error, NeuronRef, NeuronTrie, OracleBackend, PipelineConfig,
    SubstitutionProvider, SyntheticNeuronSpec, Token,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{open, BackendSpec};
use crate::{BuildArgs, EvalArgs, PredictArgs, SynthArgs, VizArgs};

/// Everything that determines a build's outputs. Written next to them as
/// `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub records: PathBuf,
    pub backend: BackendSpec,
    pub neuron: Option<NeuronRef>,
    pub out: PathBuf,
    pub seed: u64,
    pub config: PipelineConfig,
    pub substitutes: Option<PathBuf>,
    pub augment: bool,
}

impl RunManifest {
    pub fn from_args(args: &BuildArgs) -> Result<Self, Error> {
        let manifest = RunManifest {
            records: args.records.clone(),
            backend: BackendSpec::resolve(args.backend.as_deref(), args.backend_url.as_deref())?,
            neuron: args.neuron,
            out: args.out.clone(),
            seed: args.seed,
            config: args.config.apply(PipelineConfig::default()),
            substitutes: args.substitutes.clone(),
            augment: !args.no_augment,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.config.validate()?;
        let mut inputs = vec![&self.records];
        if let BackendSpec::Synthetic { path } = &self.backend {
            inputs.push(path);
        }
        inputs.extend(&self.substitutes);
        for path in inputs {
            if !path.is_file() {
                return Err(Error::Usage(format!("input file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

fn load_records(path: &Path) -> Result<Vec<ActivationRecord>, Error> {
    read_records(BufReader::new(open(path)?))
}

fn load_trie(path: &Path) -> anyhow::Result<NeuronTrie> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    NeuronTrie::from_json(&text).with_context(|| format!("loading trie {}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl(path: &Path, records: &[ActivationRecord]) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(file);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

struct NeuronBuild {
    neuron: NeuronRef,
    train: Vec<ActivationRecord>,
    test: Vec<ActivationRecord>,
    trie: NeuronTrie,
    log: BuildLog,
}

fn build_one(
    neuron: NeuronRef,
    records: Vec<ActivationRecord>,
    oracle: &dyn OracleBackend,
    provider: &dyn SubstitutionProvider,
    manifest: &RunManifest,
) -> Result<NeuronBuild, Error> {
    let (train, test) = split_train_test(&records, manifest.seed)?;
    let cfg = &manifest.config;
    let ctx = prepare(&train, neuron, cfg)?;
    let outcomes = train
        .par_iter()
        .enumerate()
        .map(|(i, r)| (i, process_record(i, r, oracle, provider, &ctx, cfg)))
        .collect();
    let out = assemble(neuron, &ctx, cfg, outcomes)?;
    if !out.log.within_query_bound {
        log::warn!("neuron {neuron}: query count exceeded the per-record bound");
    }
    log::info!(
        "neuron {neuron}: {} train, {} test, {} examples, {} trie nodes, {} queries",
        train.len(),
        test.len(),
        out.log.examples,
        out.log.trie_nodes,
        out.log.total_queries
    );
    Ok(NeuronBuild {
        neuron,
        train,
        test,
        trie: out.trie,
        log: out.log,
    })
}

fn write_build(dir: &Path, build: &NeuronBuild) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_file(&dir.join("trie.json"), build.trie.to_json().as_bytes())?;
    write_file(&dir.join("graph.dot"), emit_dot(&condense(&build.trie)).as_bytes())?;
    let mut log = serde_json::to_string_pretty(&build.log)?;
    log.push('\n');
    write_file(&dir.join("build_log.json"), log.as_bytes())?;
    write_jsonl(&dir.join("train.jsonl"), &build.train)?;
    write_jsonl(&dir.join("test.jsonl"), &build.test)?;
    Ok(())
}

/// Runs the full pipeline and writes `trie.json`, `graph.dot`,
/// `build_log.json` and the train/test split for each neuron.
pub fn cmd_build(manifest: &RunManifest, jobs: usize) -> anyhow::Result<Vec<BuildLog>> {
    manifest.validate()?;
    let records = load_records(&manifest.records)?;
    let neurons: Vec<NeuronRef> = match manifest.neuron {
        Some(n) => vec![n],
        None => records.iter().map(|r| r.neuron).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let groups: Vec<(NeuronRef, Vec<ActivationRecord>)> = neurons
        .iter()
        .map(|&n| (n, records.iter().filter(|r| r.neuron == n).cloned().collect::<Vec<_>>()))
        .collect();
    if let Some((n, _)) = groups.iter().find(|(_, rs)| rs.is_empty()) {
        return Err(Error::InsufficientData(format!("no records for neuron {n}")).into());
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData("records file is empty".into()).into());
    }

    let oracle = manifest.backend.open(&neurons)?;
    let provider = manifest
        .backend
        .substitutes(manifest.substitutes.as_deref(), !manifest.augment)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting worker pool")?;
    let builds: Vec<Result<NeuronBuild, Error>> = pool.install(|| {
        groups
            .into_par_iter()
            .map(|(n, rs)| build_one(n, rs, &*oracle, &*provider, manifest))
            .collect()
    });

    let single = manifest.neuron.is_some();
    let mut logs = Vec::with_capacity(builds.len());
    for build in builds {
        let build = build?;
        let dir = if single {
            manifest.out.clone()
        } else {
            manifest.out.join(format!("{}_{}", build.neuron.layer, build.neuron.index))
        };
        write_build(&dir, &build)?;
        logs.push(build.log);
    }
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    write_file(&manifest.out.join("manifest.json"), text.as_bytes())?;
    Ok(logs)
}

/// Scores every trie on the records of its neuron, writes the CSV report and
/// prints the summary table.
pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let records = load_records(&args.records)?;
    let mut rows = Vec::with_capacity(args.tries.len());
    for path in &args.tries {
        let trie = load_trie(path)?;
        let neuron = trie.neuron();
        let test: Vec<ActivationRecord> = records.iter().filter(|r| r.neuron == neuron).cloned().collect();
        if test.is_empty() {
            return Err(Error::InsufficientData(format!("no test records for neuron {neuron}")).into());
        }
        rows.push(NeuronScore {
            neuron,
            score: evaluate(&trie, &test)?,
        });
    }
    let summary = summary_table(&rows)?;
    match &args.report {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
            write_report(BufWriter::new(file), &rows)?;
            print!("{summary}");
        }
        None => {
            write_report(std::io::stdout().lock(), &rows)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}

/// Reads tokens from `input` and writes `token<TAB>value` per token.
pub fn cmd_predict<R: Read, W: Write>(args: &PredictArgs, mut input: R, mut output: W) -> anyhow::Result<()> {
    let trie = load_trie(&args.trie)?;
    let tokens: Vec<Token> = if args.lines {
        BufReader::new(input)
            .lines()
            .map(|line| Ok(Token::new(line?)?))
            .collect::<anyhow::Result<_>>()?
    } else {
        let mut text = String::new();
        input.read_to_string(&mut text).context("reading stdin")?;
        text.split_whitespace().map(Token::new).collect::<Result<_, _>>()?
    };
    for (token, value) in tokens.iter().zip(trie.predict(&tokens)) {
        writeln!(output, "{}\t{value:.6}", token.as_str())?;
    }
    output.flush()?;
    Ok(())
}

/// Writes the condensed graph as DOT and reports components and
/// bottleneck tokens.
pub fn cmd_viz(args: &VizArgs) -> anyhow::Result<()> {
    let trie = load_trie(&args.trie)?;
    let graph = condense(&trie);
    let dot = emit_dot(&graph);
    let mut report = String::new();
    for (i, comp) in subgraph_components(&graph).iter().enumerate() {
        let acts: Vec<&str> = comp
            .iter()
            .map(|&n| graph.node(n))
            .filter(|n| n.is_activating)
            .map(|n| n.token.as_str())
            .collect();
        report.push_str(&format!("component {i}: {} nodes, activating {:?}\n", comp.len(), acts));
    }
    for node in bottleneck_tokens(&graph) {
        report.push_str(&format!("bottleneck: {:?} at depth {}\n", node.token.as_str(), node.depth));
    }
    match &args.out {
        Some(path) => {
            write_file(path, dot.as_bytes())?;
            print!("{report}");
        }
        None => {
            print!("{dot}");
            eprint!("{report}");
        }
    }
    Ok(())
}

/// Writes a labelled JSONL corpus for a synthetic neuron.
pub fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = SyntheticNeuronSpec::from_reader(open(&args.spec)?)?;
    let cfg = CorpusConfig {
        neuron: args.neuron,
        vocab: numbered_vocab(args.vocab_size),
        min_len: args.min_len,
        max_len: args.max_len,
        prompts: args.prompts,
        plant_rate: args.plant_rate,
        seed: args.seed,
    };
    let records = generate(&spec, &cfg)?;
    match &args.out {
        Some(path) => write_jsonl(path, &records)?,
        None => {
            let mut out = std::io::stdout().lock();
            write_records(&mut out, &records)?;
            out.flush()?;
        }
    }
    Ok(())
}
