//! Data-parallel helpers with a sequential fallback.
//!
//! Verification sweeps and batched integrations map an index range through
//! a pure function. With the `parallel` feature (default) the map runs on
//! the rayon thread pool; without it, or via the `_seq` variants, it runs
//! on the calling thread. Results are collected in index order either way,
//! so output bytes do not depend on the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is on.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
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
        map_indices_seq(n, f)
    }
}

/// Sequential map over `0..n`; always available, used as the benchmark
/// baseline.
pub fn map_indices_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
