//! Chunked map-reduce over sample rows.
//!
//! Work is always split at the same fixed row boundaries and partial results
//! are folded back in chunk order, so a parallel run and a sequential run
//! produce bitwise identical sums.

use std::ops::Range;

/// Rows per work unit. Large enough that each chunk is a real GEMM.
pub const CHUNK_ROWS: usize = 256;

/// How batch computations are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// Uses the ambient rayon pool. Falls back to sequential when the crate
    /// is built without the `parallel` feature.
    Parallel,
}

impl Exec {
    /// `PARTCODER_THREADS` > 1 selects parallel evaluation. Unset or 1 keeps
    /// everything on the calling thread.
    pub fn from_env() -> Self {
        match std::env::var("PARTCODER_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            Some(n) if n > 1 => Exec::Parallel,
            _ => Exec::Sequential,
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Applies `f` to consecutive row ranges of `total` and returns the results
    /// in range order.
    pub fn map_chunks<T, F>(self, total: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let ranges: Vec<Range<usize>> = (0..total)
            .step_by(chunk)
            .map(|start| start..(start + chunk).min(total))
            .collect();
        self.map(ranges, f)
    }

    /// Order-preserving map over owned items.
    pub fn map<I, T, F>(self, items: Vec<I>, f: F) -> Vec<T>
    where
        I: Send,
        T: Send,
        F: Fn(I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
        items.into_iter().map(f).collect()
    }
}

/// Configures the global rayon pool from `PARTCODER_THREADS`. A no-op when the
/// variable is unset, the pool already exists, or the feature is off.
pub fn init_thread_pool_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var("PARTCODER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
