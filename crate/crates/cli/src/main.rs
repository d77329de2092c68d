//! `odl`: generate drifting event streams, replay retraining policies over
//! them, compare policies, and sweep hash collision rates.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(odl_core::Error),
    Io(String),
}

impl From<odl_core::Error> for CliError {
    fn from(e: odl_core::Error) -> Self {
        match e {
            odl_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use odl_core::Error;
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 2,
            CliError::Core(Error::Divergence(_)) => 4,
            CliError::Io(_) | CliError::Core(Error::Io(_)) => 5,
            CliError::Core(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "odl",
    version,
    about = "Online learning backtests over drifting event streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic JSON-lines event log.
    Gen(GenArgs),
    /// Replay one retraining policy over an event log.
    Replay(ReplayArgs),
    /// Replay several policies and emit a lift table against a baseline.
    Compare(CompareArgs),
    /// Measure hash collision rates over a bucket sweep.
    Collisions(CollisionArgs),
}

#[derive(Args, Clone)]
pub struct OutDir {
    /// Directory for outputs; relative output paths resolve against it.
    #[arg(long, env = "ODL_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub users: usize,
    #[arg(long, default_value_t = 300)]
    pub items: usize,
    #[arg(long, default_value_t = 8)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub days: usize,
    #[arg(long, default_value_t = 2000)]
    pub events_per_day: usize,
    #[arg(long, default_value_t = 0.2)]
    pub drift_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub churn_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub context_dim: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub label_bias: f64,
    /// Event log to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub out_dir: OutDir,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    /// Rows per embedding table.
    #[arg(long, default_value_t = 4096)]
    pub buckets: u64,
    /// Use two hash tables per id kind.
    #[arg(long)]
    pub double_hash: bool,
    #[arg(long, default_value_t = 0.05)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum PolicyName {
    None,
    Stateless,
    Stateful,
    Online,
}

#[derive(Copy, Clone, ValueEnum)]
pub enum WindowName {
    PerDay,
    Cumulative,
}

#[derive(Args)]
pub struct ReplayArgs {
    /// JSON-lines event log.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub policy: PolicyName,
    #[arg(long, default_value_t = 7)]
    pub window_days: usize,
    #[arg(long, default_value_t = 1)]
    pub cadence_days: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    /// Shuffle events within each retrain session.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long, default_value_t = 0)]
    pub pretrain_days: usize,
    #[arg(long, value_enum, default_value = "per-day")]
    pub metrics_window: WindowName,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Prefix of the output files; defaults to the policy label.
    #[arg(long)]
    pub name: Option<String>,
    /// Write the final model checkpoint here.
    #[arg(long)]
    pub save_model: Option<PathBuf>,
    #[command(flatten)]
    pub out_dir: OutDir,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated policies, e.g. `none,stateful-weekly,stateful-daily,stateless:7:1`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub policies: Vec<String>,
    /// Baseline policy; defaults to the first one listed.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub pretrain_days: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "compare")]
    pub name: String,
    #[command(flatten)]
    pub out_dir: OutDir,
}

#[derive(Args)]
#[group(id = "ids", required = true, multiple = false, args = ["num_ids", "ids_file"])]
pub struct CollisionArgs {
    /// Number of random ids to draw.
    #[arg(long)]
    pub num_ids: Option<usize>,
    /// File with one id per line.
    #[arg(long)]
    pub ids_file: Option<PathBuf>,
    /// Comma-separated, strictly increasing bucket counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub buckets: Vec<u64>,
    /// Also measure double hashing on the same ids.
    #[arg(long)]
    pub double: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "collisions")]
    pub name: String,
    #[command(flatten)]
    pub out_dir: OutDir,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Replay(a) => commands::replay(a),
        Command::Compare(a) => commands::compare(a),
        Command::Collisions(a) => commands::collisions(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
