//! Per-agent map helpers. One synchronous round does the same pure
//! computation on every agent; results are collected in agent order, so
//! the parallel and sequential schedules are bitwise identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every agent index, parallel when the `parallel`
/// feature is enabled. Output order is always agent order.
pub fn map_agents<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference schedule, kept available regardless of features
/// for equivalence tests and benchmarks.
pub fn map_agents_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
