//! `logenc`: command-line pipelines over the logenc toolkit.
//!
//! Exit status is 0 on success, 1 on a domain error and 2 on a config or
//! usage error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "logenc", version, about = "Security-log language model toolkit")]
pub struct Cli {
    /// Global seed; every module seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// JSON pipeline config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Exact then MinHash near-duplicate removal.
    Dedup(DedupArgs),
    /// Train or apply a BPE tokenizer.
    #[command(subcommand)]
    Tokenizer(TokenizerCmd),
    /// Pretrain the encoder with the delimiter-aware MLM objective.
    Pretrain(PretrainArgs),
    /// Mean-pooled embeddings for every record.
    Embed(EmbedArgs),
    /// Mine Drain templates.
    Templates(TemplatesArgs),
    /// Intrinsic and extrinsic evaluation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Greedy Max-Min subsampling.
    Subsample(SubsampleArgs),
    /// Isolation-forest pattern detection.
    Detect(DetectArgs),
    /// KNN incident triage.
    Triage(TriageArgs),
    /// Top-k document retrieval.
    Retrieve(RetrieveArgs),
    /// Finetune the last encoder block with a set-classification head.
    Probe(ProbeArgs),
    /// synth, dedup, tokenizer, pretrain and eval end to end.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// syslog, jsonl, mixed, ood or incidents.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub anomaly_rate: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub perms: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub shingle: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum TokenizerCmd {
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the comma-separated tokens of a string.
    Encode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        text: String,
    },
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from the checkpoint already in `--out`.
    #[arg(long)]
    pub resume: bool,
}

/// Model location shared by every command that embeds text.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tokenizer file (default: `tokenizer.json` inside the checkpoint).
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TemplatesArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub similarity_threshold: Option<f64>,
    #[arg(long)]
    pub max_children: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Masked-token pseudo-perplexity and accuracy.
    Intrinsic {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        /// IDTS, ODTS or other.
        #[arg(long, default_value = "other")]
        tag: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PMean, NMean and Diff over Drain-derived pairs.
    Similarity {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Template-relevance MRR and MAP.
    Search {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub logs: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub logs: PathBuf,
    /// embedding or hybrid.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub top: Option<usize>,
    /// Precomputed embeddings (embedding mode only).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Comma-separated structured columns for hybrid mode.
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TriageArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tp_threshold: Option<f64>,
    #[arg(long)]
    pub bpfp_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Embeddings file of the document collection.
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSONL of `{"logs": [raw, ...], "label": ...}`.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub set_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config::config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config::config_error(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.derive_seeds();
    commands::dispatch(cli.command, config, cli.manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
