//! Command-line entry points: `train`, `eval`, `visualize`, `ablate` and
//! `make-synth`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage, argument or
//! configuration errors. Failures print one JSON line to stderr.

pub mod ablate;
pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use unetgan_core::{Config, Error};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "unetgan", version, about = "U-Net discriminator GAN trainer and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoints/, metrics.ndjson and samples/ under --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print one metrics record.
    Eval(EvalArgs),
    /// Render heatmaps, CutMix panels, the score scatter and metric curves.
    Visualize(VisualizeArgs),
    /// Run the cumulative ablation ladder and write a comparison table.
    Ablate(AblateArgs),
    /// Write the synthetic shapes dataset as PNG files.
    MakeSynth(MakeSynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a field, e.g. `--set train.total_iterations=5`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Continue from a checkpoint; its embedded config is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Real-feature statistics cache; created if missing.
    #[arg(long)]
    pub stats_cache: Option<PathBuf>,
    /// Samples per side (defaults to the checkpoint's eval.fid_samples).
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Metrics log for the curves (defaults to the run's metrics.ndjson, then
    /// to the records stored in the checkpoint).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Iterations per configuration (defaults to train.total_iterations).
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MakeSynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// 0 for unconditional; otherwise one subdirectory per class.
    #[arg(long, default_value_t = 0)]
    pub classes: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

/// Invalid combination of command-line arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A failure with its exit code and a short machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    /// JSON object printed to stderr.
    pub fn line(&self) -> String {
        json!({"error": self.kind, "code": self.code, "message": self.message}).to_string()
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let message = format!("{e:#}");
        if e.downcast_ref::<UsageError>().is_some() {
            return Self::usage(message);
        }
        match e.downcast_ref::<Error>() {
            Some(Error::Config(_) | Error::Invalid(_) | Error::InvalidArgument(_)) => Self {
                code: EXIT_USAGE,
                kind: "config",
                message,
            },
            Some(Error::NonFinite { .. }) => Self {
                code: EXIT_RUNTIME,
                kind: "non_finite",
                message,
            },
            Some(Error::Checkpoint(_)) => Self {
                code: EXIT_RUNTIME,
                kind: "checkpoint",
                message,
            },
            _ => Self {
                code: EXIT_RUNTIME,
                kind: "runtime",
                message,
            },
        }
    }
}

/// Loads the config (defaults when no file is given), applies overrides
/// and validates.
pub fn resolve_config(args: &ConfigArgs) -> anyhow::Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg.validate()?)
}

/// Executes a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Visualize(a) => commands::visualize(&a),
        Command::Ablate(a) => ablate::cmd_ablate(&a),
        Command::MakeSynth(a) => commands::make_synth(&a),
    };
    match result.map_err(Failure::from) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{}", f.line());
            f.code
        }
    }
}
