//! `mrfgat` — dataset preparation, training, evaluation, and verification
//! harnesses for the multi-scale graph-attention point-cloud classifier.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 runtime
//! failure, 2 usage error (including bad flags and malformed configs).

mod cmd;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// A command failure routed to the right exit code.
#[derive(Debug)]
pub enum Failure {
    /// The invocation was wrong (exit 2).
    Usage(String),
    /// The invocation was fine but the work failed (exit 1).
    Runtime(String),
}

impl From<mrfgat_core::Error> for Failure {
    fn from(e: mrfgat_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "mrfgat", version, about = "Point-cloud classifier pipeline")]
struct Cli {
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Experiment preset name or path to a key=value config file.
    #[arg(long, global = true)]
    config: Option<String>,

    /// Single-lane execution: disables worker-pool parallelism so runs are
    /// reproducible bit-for-bit regardless of machine.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scan a raw ModelNet directory and build a binary point-cloud cache.
    Prepare(PrepareArgs),
    /// Train a network on a prepared cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a cache split.
    Eval(EvalArgs),
    /// Finite-difference gradient audit of the full network.
    Gradcheck(GradcheckArgs),
    /// Time the kNN backends against each other and verify they agree.
    BenchKnn(BenchKnnArgs),
    /// Dump cache or checkpoint metadata.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw ModelNet root (class directories with train/ and test/).
    #[arg(long)]
    raw: PathBuf,
    /// Output cache file.
    #[arg(long)]
    out: PathBuf,
    /// Points sampled per mesh.
    #[arg(long, default_value_t = 1024)]
    points: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared cache file.
    #[arg(long)]
    cache: PathBuf,
    /// Directory for best.ckpt / last.ckpt.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Append per-epoch JSON lines to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Resume from this checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the configured epoch budget.
    #[arg(long)]
    epochs: Option<u32>,
    /// Override the configured batch size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the configured initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the configured stratified train-subset fraction.
    #[arg(long)]
    subset: Option<f64>,
    /// Override the configured evaluation interval.
    #[arg(long)]
    eval_every: Option<u32>,
    /// Print per-epoch logs as JSON lines instead of readable rows.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Prepared cache file.
    #[arg(long)]
    cache: PathBuf,
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which split to score.
    #[arg(long, default_value = "test")]
    split: String,
    /// Samples per evaluation work unit.
    #[arg(long, default_value_t = 16)]
    chunk: usize,
    /// Emit metrics as JSON instead of the readable report.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Points per random cloud.
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Clouds per batch.
    #[arg(long, default_value_t = 2)]
    batch: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Pass threshold on the worst relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct BenchKnnArgs {
    /// Points per cloud.
    #[arg(long, default_value_t = 1024)]
    n: usize,
    /// Neighbors per point (self included).
    #[arg(long, default_value_t = 32)]
    k: usize,
    /// Clouds timed per backend.
    #[arg(long, default_value_t = 20)]
    repeat: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// Cache file to describe.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Checkpoint file to describe.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("worker pool setup failed: {e}")))?;
    }
    match cli.command {
        Command::Prepare(args) => cmd::prepare::run(&args, cli.seed.unwrap_or(0)),
        Command::Train(args) => cmd::train::run(&args, cli.config.as_deref(), cli.seed),
        Command::Eval(args) => cmd::eval::run(&args),
        Command::Gradcheck(args) => cmd::gradcheck::run(&args, cli.seed.unwrap_or(0)),
        Command::BenchKnn(args) => cmd::bench::run(&args, cli.seed.unwrap_or(0)),
        Command::Inspect(args) => cmd::inspect::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
