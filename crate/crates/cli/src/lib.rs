//! Command-line driver: instance generation, training, evaluation, decode
//! benchmarks and self-checks. Every subcommand is deterministic given `--seed`.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpl_core::experiment::{Method, Objective, Task};

pub use commands::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Core(#[from] cpl_core::error::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for failed checks and runtime errors, 2 for bad input or configuration.
    pub fn exit_code(&self) -> u8 {
        use cpl_core::error::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidConfig(_)) => 2,
            CliError::Core(E::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cpl", version, about = "Contextual Plackett-Luce set selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/validation instance files.
    Generate(GenerateArgs),
    /// Train a selection head or a unary baseline.
    Train(TrainArgs),
    /// Decode validation instances and write metric CSVs.
    Eval(EvalArgs),
    /// Time incremental against from-scratch greedy decoding.
    Bench(BenchArgs),
    /// Check the five-element ambiguity fixture.
    ToyVerify(ToyArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub task: Task,
    /// Total number of instances.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train.jsonl and val.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Exact validation count; overrides --val-fraction.
    #[arg(long)]
    pub n_val: Option<usize>,
    /// TOML file of generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fork_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: Task,
    /// Directory holding train.jsonl and val.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json and train_log.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file of training settings, merged over the task defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print one JSON line per epoch to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Val)]
    pub split: Split,
    /// Checkpoint files; each method uses the first compatible one.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long = "method", value_delimiter = ',', default_value = "cpl")]
    pub methods: Vec<Method>,
    /// Output directory for metrics.csv and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Sweep thresholds on the evaluated split; when false the checkpoint's threshold is used.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub threshold_sweep: bool,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub decodes: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Zero W[c][b] before checking.
    #[arg(long)]
    pub ablate_promotion: bool,
    /// Override the EOS utility.
    #[arg(long)]
    pub theta_eos: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    None,
    FlipGradW,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 80)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FaultArg::None)]
    pub inject_fault: FaultArg,
}

/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;
