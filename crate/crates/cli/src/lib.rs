//! Command-line driver for the merge simulator and its multi-agent trainer.
//!
//! Every subcommand resolves a [`RunConfig`] (preset, then TOML file, then
//! `--override` flags), writes its outputs under `--out`, and stamps each file
//! with the SHA-256 of the resolved configuration.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{Preset, RunConfig};
pub use error::{CliError, CliResult};

use altruist_marl::BuiltinPolicy;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "altruist", version, about = "Mixed-autonomy highway merging: simulate, train and compare AV policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML run configuration layered on top of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `training.gamma=0.95`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the shared AV policy; writes curves, checkpoints and the resolved config.
    Train(Common),
    /// Greedy evaluation of a checkpoint or builtin policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
        checkpoint: Option<PathBuf>,
        /// Builtin AV behaviour instead of a checkpoint: idle or random.
        #[arg(long)]
        policy: Option<BuiltinPolicy>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// One episode exported as a trace, speed profiles and optional observation images.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        policy: Option<BuiltinPolicy>,
        /// Also write VelocityMap channel images (PGM).
        #[arg(long)]
        frames: bool,
    },
    /// Evaluate an egoistic and an altruistic checkpoint on the same seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        egoistic: PathBuf,
        #[arg(long)]
        altruistic: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Evaluation seed for the egoistic side; must equal the altruistic one.
        #[arg(long)]
        egoistic_seed: Option<u64>,
        #[arg(long)]
        altruistic_seed: Option<u64>,
    },
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(cli.command) {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
