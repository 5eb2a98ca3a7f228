//! Batch experiment runner for `hypodens`: configuration, subcommands,
//! artifact emission and the acceptance suite.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

pub use args::{Cli, Command, RunArgs};
pub use commands::{run, RunOutcome};
pub use config::{ExperimentConfig, ModelChoice, ResolvedModel};
pub use error::{CliError, CliResult};
pub use hypodens_core as core;

/// Size the global worker pool from `HYPODENS_THREADS`, when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("HYPODENS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HYPODENS_THREADS={raw}: expected a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("HYPODENS_THREADS: {e}")))
}
