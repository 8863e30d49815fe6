//! Data-parallel driver for trajectory batches and grid evaluations.
//!
//! With the `parallel` feature (default) indexed maps run on the rayon pool;
//! without it they run sequentially. Results are collected in index order and
//! every reduction in the crate is either an integer count or a per-index
//! value, so outputs are identical under any execution order.

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential reference driver; the criterion bench compares this against
/// [`map_indexed`] on the same workloads.
pub fn map_indexed_seq<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
