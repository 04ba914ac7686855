//! Command-line front end: experiment configs, model and data files, and
//! one subcommand per pipeline stage.
//!
//! ```text
//! sdreg <generate|learn|evaluate|denoise|diagnose|normalize> --config <path>
//!       [--jobs N] [--seed S] [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O error or malformed file. Logging is controlled by `SDREG_LOG`
//! (`error`, `info` or `debug`).

use std::path::PathBuf;

use clap::Parser;

pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod sweep;

pub use config::{ExperimentConfig, Task};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "sdreg", version, about = "Learn semidefinite regularizers from data")]
pub struct Cli {
    /// Pipeline stage to run; must match the config's task.
    #[arg(value_enum)]
    pub task: Task,
    /// JSON experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's out_dir (default: current
    /// directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Load the config, apply command-line overrides and run the task on a
/// thread pool of the requested size. Returns the files written.
pub fn execute(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if cfg.task != cli.task {
        return Err(CliError::config(format!(
            "command is {} but the config's task is {}",
            cli.task, cfg.task
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs == Some(0) {
        return Err(CliError::config("--jobs must be positive"));
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config(format!("cannot start {} worker threads: {e}", cli.jobs.unwrap_or(0))))?;
    log::info!("running {} with seed {} into {}", cfg.task, cfg.seed, out.display());
    pool.install(|| commands::run(&cfg, &out))
}
