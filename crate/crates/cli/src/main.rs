//! Command-line front end: gen | ingest | train | eval | ablate.
//!
//! One JSON config drives everything; `--seed` and `--out` override the
//! config's seed and output directory. Exit codes: 0 success, 1 runtime
//! failure, 2 config/validation failure.

mod commands;
mod config;
mod report;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub config_error: bool,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: String) -> Self {
        Self {
            config_error: true,
            msg,
        }
    }
    pub fn runtime(msg: String) -> Self {
        Self {
            config_error: false,
            msg,
        }
    }
}

#[derive(Parser)]
#[command(name = "omnitraj", about = "Frame-rate-aware trajectory forecasting lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Fps,
    Decoupled,
    Mask,
    Twoframe,
    Fewshot,
}

impl Which {
    fn as_str(&self) -> &'static str {
        match self {
            Which::Fps => "fps",
            Which::Decoupled => "decoupled",
            Which::Mask => "mask",
            Which::Twoframe => "twoframe",
            Which::Fewshot => "fewshot",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic scenes as NDJSON.
    Gen(Common),
    /// Ingest NDJSON scenes into a binary sample cache.
    Ingest(Common),
    /// Train a model; writes checkpoint, loss curve, and final metrics.
    Train(Common),
    /// Evaluate a checkpoint; writes metrics CSV/JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (overrides `eval.checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run an ablation study and emit its table CSV and SVG chart.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        which: Which,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Gen(c) => commands::cmd_gen(&load(&c)?),
        Cmd::Ingest(c) => commands::cmd_ingest(&load(&c)?),
        Cmd::Train(c) => commands::cmd_train(&load(&c)?),
        Cmd::Eval { common, checkpoint } => commands::cmd_eval(&load(&common)?, checkpoint),
        Cmd::Ablate { common, which } => commands::cmd_ablate(&load(&common)?, which.as_str()),
    }
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    RunConfig::load(&c.config, c.seed, c.out.clone())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if e.config_error { "config" } else { "runtime" };
            eprintln!("error: {kind}: {}", e.msg.replace('\n', " "));
            if e.config_error {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
