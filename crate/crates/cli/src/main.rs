mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use thiserror::Error;
use vinet::formats::FormatError;

/// Visual-inertial odometry: synthetic data, training, evaluation.
///
/// Every subcommand accepts `--config FILE` (TOML with sections
/// `[trajectory]`, `[dataset]`, `[model]`, `[train]`, `[eval]`,
/// `[robustness]`) and any number of `--set section.key=value` overrides,
/// applied after the file. `vinet defaults` prints every key with its
/// default. Log verbosity follows `RUST_LOG` (default `info`).
///
/// Exit codes: 0 success, 1 runtime failure, 2 missing path, 3 invalid
/// configuration, 4 malformed input file, 5 training diverged, 6 gradient
/// check failed, 7 I/O error, 64 usage error.
#[derive(Parser, Debug)]
#[command(name = "vinet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the default configuration as TOML.
    Defaults,
    /// Simulate a dataset into `OUT/{train,val,test}/NNN`.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on `DATA/train`, validate on `DATA/val`; writes a checkpoint and a curve CSV.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Curve CSV (`epoch,mode,train_loss,val_loss`).
        #[arg(long)]
        curve: PathBuf,
    },
    /// Run a checkpoint on one sequence; writes ATE and segment errors.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// Metrics CSV (`metric,length_m,value`).
        #[arg(long)]
        out: PathBuf,
        /// Also write the predicted trajectory.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Finite-difference check of every backward pass.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Optional CSV of the results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ATE of each checkpoint under growing extrinsic miscalibration.
    Robustness {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated checkpoint files; columns are named by file stem.
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        sequence: PathBuf,
        /// Comma-separated degrees; overrides `robustness.magnitudes_deg`.
        #[arg(long, value_delimiter = ',')]
        magnitudes: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train frame-to-frame, joint and full-pose runs from one initialization.
    Modes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing {}", .0.display())]
    Missing(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(FormatError),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Diverged(String),
    #[error("{0} gradient check(s) failed")]
    GradCheck(usize),
    #[error("{0}")]
    Runtime(String),
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Missing(p) => CliError::Missing(p),
            FormatError::Io { path, source } => CliError::Io(path, source),
            other => CliError::Format(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::Format(_) => 4,
            CliError::Diverged(_) => 5,
            CliError::GradCheck(_) => 6,
            CliError::Io(..) => 7,
        }
    }
}

const USAGE_EXIT: u8 = 64;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
