use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{parse_budget, IndexKind};

#[derive(Debug)]
pub enum CliError {
    /// Malformed configuration or missing input files.
    Config(String),
    Runtime(String),
}

impl From<aria_core::Error> for CliError {
    fn from(e: aria_core::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "aria", version, about = "Attacks on image fingerprinting and robust contrastive training")]
struct Cli {
    /// Worker threads; 1 runs fully deterministic single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// JSON experiment config; omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct OutDir {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Default)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    /// Training perturbation radius, e.g. 4/255.
    #[arg(long, value_parser = config::parse_number)]
    eps: Option<f64>,
    #[arg(long)]
    batch_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a procedural corpus of sources and distractors.
    GenCorpus {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        sources: Option<usize>,
        #[arg(long)]
        distractors: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a fingerprint model (standard, or adversarial with --inner-steps).
    TrainFingerprint {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        corpus: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainOverrides,
        /// Hashing penalty weight.
        #[arg(long)]
        alpha: Option<f64>,
        /// Measure recall every this many epochs.
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Train a comparator model.
    TrainComparator {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainOverrides,
        #[arg(long)]
        pairs_per_epoch: Option<usize>,
    },
    /// Attack non-editorial queries and write the realized images.
    Attack {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// NORM:EPS:ITERS[:STEP], e.g. linf:8/255:50.
        #[arg(long, value_parser = parse_budget)]
        budget: Option<aria_core::attacks::AttackBudget>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Synthesize images whose sign hash matches corpus hashes.
    InvertHash {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        targets: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Index the fingerprints of every corpus image.
    BuildIndex {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long = "type", value_enum)]
        kind: Option<IndexKind>,
        #[arg(long)]
        nlist: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        nbits: Option<u32>,
    },
    /// Retrieval grid over the three query sets, clean and attacked.
    Evaluate {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Prebuilt flat or IVF-PQ index; a flat index is built otherwise.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Also evaluate this comparator on labelled pairs.
        #[arg(long)]
        comparator: Option<PathBuf>,
        /// Attack budgets (repeatable); replaces the configured list.
        #[arg(long, value_parser = parse_budget)]
        budget: Vec<aria_core::attacks::AttackBudget>,
        /// Evaluate clean queries only.
        #[arg(long, conflicts_with = "budget")]
        no_attack: bool,
        #[arg(long)]
        queries: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        nprobe: Option<usize>,
        /// Report name (defaults to the model file stem).
        #[arg(long)]
        name: Option<String>,
    },
    /// Twin adversarial runs with one and three inner steps.
    ProbeOverfitting {
        #[command(flatten)]
        out: OutDir,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        init: Option<PathBuf>,
        #[command(flatten)]
        train: TrainOverrides,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Merge reports and training curves into CSV tables.
    Report {
        #[command(flatten)]
        out: OutDir,
        /// EvalReport, training curve, or probe JSON files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
