//! Replication execution: data-parallel over independent Monte Carlo
//! replications when the `parallel` feature is on, sequential otherwise.
//!
//! Results are always collected in replication order, so output is
//! identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Run `f(0..count)` sequentially. Always available; used as the
/// reference path in benchmarks.
pub fn map_replications_seq<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..count).map(f).collect()
}

/// Run `f` over replication indices, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_replications<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_replications<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_replications_seq(count, f)
}
