//! Experiment harness: dataset generation, training runs, evaluation, size
//! sweeps, the property-verification suites and the result tables.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod table;
pub mod verify;

use std::fmt;

/// An error caused by how the program was invoked (exit code 2) rather than
/// by a failure while running (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Worker threads for independent runs: `REYNET_THREADS` if set, else the
/// number of CPUs.
pub fn thread_count() -> usize {
    std::env::var("REYNET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `f` on a pool capped by [`thread_count`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build()?;
    Ok(pool.install(f))
}
