//! Parallel replicate execution.

use dlmm_core::experiments::{replicate_jobs, run_replicate, summarize, ComparisonReport, Protocol, ScenarioGrid};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs every replicate of the grid on a pool of `threads` workers (all
/// cores when `None`). Replicates are seeded by position and collected in
/// job order, so the report does not depend on the thread count.
pub fn run_parallel(grid: &ScenarioGrid, protocol: &Protocol, threads: Option<usize>) -> Result<ComparisonReport> {
    grid.validate()?;
    if threads == Some(0) {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?;
    let jobs = replicate_jobs(grid);
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, r)| run_replicate(grid, protocol, s, r))
            .collect::<Vec<_>>()
    });
    Ok(summarize(grid, protocol, records))
}
