//! Command-line front end: configuration, subcommands and SVG output.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

pub use config::ConfigMap;
pub use error::{CliError, CliResult};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "LINESCOPE_THREADS";

/// Runs `f` on a dedicated pool of `threads` workers (0: one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}
