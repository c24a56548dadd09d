// SPDX-License-Identifier: Apache-2.0

//! Command-line driver for the neuron-graph pipeline.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use n2g_core::{NeuronRef, PipelineConfig};

mod backend;
mod commands;

pub use backend::BackendSpec;
pub use commands::{cmd_build, cmd_eval, cmd_predict, cmd_synth, cmd_viz, RunManifest};

/// Exit status for bad inputs (missing files, malformed records, bad flags).
pub const EXIT_INPUT: i32 = 2;
/// Exit status for failures reported by the activation backend.
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "n2g", version, about = "Distill a neuron's behaviour into an executable context graph")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split records, then prune, score, augment and build the trie.
    Build(BuildArgs),
    /// Score one or more tries against held-out records.
    Eval(EvalArgs),
    /// Print the trie's predicted activation for tokens read from stdin.
    Predict(PredictArgs),
    /// Render a trie as DOT and report its structure.
    Viz(VizArgs),
    /// Generate a labelled corpus from a synthetic neuron spec.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// `synthetic:PATH` or `remote:URL`; defaults to `remote:$N2G_BACKEND_URL`.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, env = "N2G_BACKEND_URL", hide_env_values = true)]
    pub backend_url: Option<String>,
    /// Neuron as LAYER:INDEX. Without it every neuron in the records is
    /// built, each into its own `LAYER_INDEX` subdirectory.
    #[arg(long)]
    pub neuron: Option<NeuronRef>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads shared by neurons and their records.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Substitution table (JSON map token -> [[token, prob]]). Remote
    /// backends default to the service's substitution endpoint.
    #[arg(long)]
    pub substitutes: Option<PathBuf>,
    /// Skip augmentation entirely.
    #[arg(long)]
    pub no_augment: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args, Default, Clone)]
pub struct ConfigArgs {
    #[arg(long)]
    pub recovery_fraction: Option<f64>,
    #[arg(long)]
    pub activation_threshold: Option<f64>,
    #[arg(long)]
    pub importance_threshold: Option<f64>,
    #[arg(long)]
    pub firing_threshold: Option<f64>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub prob_min: Option<f64>,
}

impl ConfigArgs {
    pub fn apply(&self, mut cfg: PipelineConfig) -> PipelineConfig {
        if let Some(v) = self.recovery_fraction {
            cfg.recovery_fraction = v;
        }
        if let Some(v) = self.activation_threshold {
            cfg.activation_threshold = v;
        }
        if let Some(v) = self.importance_threshold {
            cfg.importance_threshold = v;
        }
        if let Some(v) = self.firing_threshold {
            cfg.firing_threshold = v;
        }
        if let Some(v) = self.top_n {
            cfg.top_n_substitutes = v;
        }
        if let Some(v) = self.prob_min {
            cfg.substitute_prob_min = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trie documents to score; repeat for several neurons.
    #[arg(long = "trie", required = true)]
    pub tries: Vec<PathBuf>,
    /// Held-out records; each trie is scored on the records of its neuron.
    #[arg(long)]
    pub records: PathBuf,
    /// CSV report path; written to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub trie: PathBuf,
    /// Read one token per line (preserving spaces) instead of splitting on
    /// whitespace.
    #[arg(long)]
    pub lines: bool,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub trie: PathBuf,
    /// DOT output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic neuron spec (JSON rules).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub neuron: NeuronRef,
    #[arg(long, default_value_t = 20)]
    pub prompts: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 8)]
    pub min_len: usize,
    #[arg(long, default_value_t = 24)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub plant_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSONL output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Build(args) => {
            let manifest = RunManifest::from_args(&args)?;
            cmd_build(&manifest, args.jobs).map(|_| ())
        }
        Command::Eval(args) => cmd_eval(&args),
        Command::Predict(args) => cmd_predict(&args, std::io::stdin().lock(), std::io::stdout().lock()),
        Command::Viz(args) => cmd_viz(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let backend = err
        .chain()
        .filter_map(|e| e.downcast_ref::<n2g_core::Error>())
        .any(n2g_core::Error::is_backend);
    if backend {
        EXIT_BACKEND
    } else {
        EXIT_INPUT
    }
}
