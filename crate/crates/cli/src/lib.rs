//! Commands behind the `polypseg` binary, callable as a library.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod figures;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "POLYP_THREADS";

/// Sizes the global thread pool from `POLYP_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(CliError::Config(format!("{THREADS_ENV} must be >= 1")));
    }
    // A second call (tests) finds the pool already built; that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
