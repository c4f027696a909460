mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ModeChoice, Precision, ScorerKind};

/// Error raised for bad flags or config files.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Raised by `gradcheck` when any tensor misses the tolerance.
#[derive(Debug, thiserror::Error)]
#[error("gradient check failed: max relative error {0:.3e}")]
pub struct GradcheckFailed(pub f64);

pub const LOG_ENV: &str = "DVMATCH_LOG";

#[derive(Parser)]
#[command(name = "dvmatch", version, about = "Dual-view lesion matching: synthetic data, training, evaluation and the candidate pipeline")]
#[command(after_help = "Flags override values from --config. Log verbosity comes from DVMATCH_LOG (error, warn, info, debug, trace).")]
struct Cli {
    /// TOML config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dual-view dataset.
    Synth(SynthArgs),
    /// Train an ensemble from scratch.
    Train(TrainArgs),
    /// Continue training saved members with early layers frozen.
    Finetune(TrainArgs),
    /// Score held-out pairs (or a score file) and export the ROC.
    Eval(EvalArgs),
    /// Normalized cross-correlation baseline on the same pairs.
    Ncc(NccArgs),
    /// Pair candidates across views, score, and reduce false detections.
    Pipeline(PipelineArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct DataArgs {
    /// Dataset manifest (manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Patient split (split.json); without it every study is used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Dice threshold for labeling candidates.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of patients, one lesion pair each.
    #[arg(long, alias = "pairs")]
    pub patients: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed; required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Architecture preset: desk or full.
    #[arg(long)]
    pub arch: Option<String>,
    /// Directory with member checkpoints to start from (finetune).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub members: Option<usize>,
    /// Arithmetic for training and scoring (default f32).
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// Directory with member checkpoints.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate a `score,label` CSV instead of a model.
    #[arg(long, conflicts_with = "checkpoint")]
    pub scores: Option<PathBuf>,
    /// Arithmetic for training and scoring (default f32).
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct NccArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerKind>,
    #[arg(long, value_enum)]
    pub standalone_mode: Option<ModeChoice>,
    /// Arithmetic for training and scoring (default f32).
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
}

#[derive(Args, Clone, Debug, Default)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Check at most this many entries per tensor.
    #[arg(long)]
    pub max_per_tensor: Option<usize>,
}

/// Process exit codes, one per error category.
pub mod exit {
    pub const GENERIC: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const INCOMPATIBLE_CHECKPOINT: u8 = 5;
    pub const VALIDATION: u8 = 6;
    pub const NUMERIC: u8 = 7;
    pub const GRADCHECK_FAILED: u8 = 8;
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ("usage", exit::USAGE);
        }
        if cause.downcast_ref::<GradcheckFailed>().is_some() {
            return ("gradcheck-failed", exit::GRADCHECK_FAILED);
        }
        if let Some(e) = cause.downcast_ref::<dvmatch::Error>() {
            let cat = e.category();
            let code = match cat {
                "io" => exit::IO,
                "format" => exit::FORMAT,
                "incompatible-checkpoint" => exit::INCOMPATIBLE_CHECKPOINT,
                "validation" => exit::VALIDATION,
                "numeric" => exit::NUMERIC,
                _ => exit::GENERIC,
            };
            return (cat, code);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ("io", exit::IO);
        }
    }
    ("generic", exit::GENERIC)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => config::FileConfig::load(p)?,
        None => config::FileConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&a, &file),
        Command::Train(a) => commands::train(&a, &file, false),
        Command::Finetune(a) => commands::train(&a, &file, true),
        Command::Eval(a) => commands::eval(&a, &file),
        Command::Ncc(a) => commands::ncc(&a, &file),
        Command::Pipeline(a) => commands::pipeline(&a, &file),
        Command::Gradcheck(a) => commands::gradcheck(&a, &file),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = classify(&e);
            eprintln!("error[{cat}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
