//! Execution strategy for batches of independent work items.
//!
//! Verification suites run many independent trials (randomized kernels,
//! per-subset commutant checks, query sweeps). With the `parallel` feature
//! enabled these fan out over rayon; otherwise they run sequentially.
//! Results always come back in index order, so reports are byte-identical
//! across both modes, and every trial derives its own RNG from
//! `(seed, index)` rather than sharing one stream.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<U: Send, F: Fn(usize) -> U + Sync + Send>(n: usize, f: F) -> Vec<U> {
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}

/// Always-sequential variant, kept available so benchmarks can compare the
/// two execution strategies within a single build.
pub fn map_indexed_seq<U, F: Fn(usize) -> U>(n: usize, f: F) -> Vec<U> {
    (0..n).map(f).collect()
}
