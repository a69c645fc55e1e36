//! Deterministic reductions over sample indices.
//!
//! Per-sample accumulations (losses, gradient sums, curvature matrices) are
//! associative reductions over `0..n`. With the `parallel` feature the index
//! range is split into chunks of a fixed width, each chunk is folded in index
//! order, and the chunk results are combined in index order. The grouping is
//! a function of `n` alone, so the result is independent of the number of
//! worker threads and identical across reruns. It can differ from the strict
//! sequential fold only through the regrouped floating-point additions; at
//! the problem sizes handled here the difference stays below `1e-12`
//! relative, and the test suites use tolerances accordingly.
//!
//! Without the `parallel` feature both entry points run the plain sequential
//! fold.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk width for the parallel fold. Not tied to the thread count.
pub const CHUNK: usize = 128;

/// Minimum index count before the fold pays for thread dispatch. Below this
/// the per-sample arithmetic is cheaper than the scheduling overhead.
pub const PAR_MIN: usize = 2048;

/// Fold `0..n` into an accumulator, in parallel when enabled.
///
/// ```
/// let total = curvlab::reduce::indexed_fold(100, || 0u64, |acc, i| acc + i as u64, |a, b| a + b);
/// assert_eq!(total, 4950);
/// ```
pub fn indexed_fold<A, Init, Fold, Combine>(n: usize, init: Init, fold: Fold, combine: Combine) -> A
where
    A: Send,
    Init: Fn() -> A + Sync,
    Fold: Fn(A, usize) -> A + Sync,
    Combine: Fn(A, A) -> A,
{
    #[cfg(feature = "parallel")]
    {
        if n >= PAR_MIN {
            let partials: Vec<A> = (0..n)
                .step_by(CHUNK)
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|start| {
                    let end = (start + CHUNK).min(n);
                    (start..end).fold(init(), &fold)
                })
                .collect();
            return partials.into_iter().reduce(combine).unwrap_or_else(&init);
        }
    }
    let _ = &combine;
    indexed_fold_seq(n, init, fold)
}

/// Strictly sequential fold over `0..n`.
pub fn indexed_fold_seq<A, Init, Fold>(n: usize, init: Init, fold: Fold) -> A
where
    Init: Fn() -> A,
    Fold: Fn(A, usize) -> A,
{
    (0..n).fold(init(), fold)
}

/// Map `0..n` to a vector, preserving index order.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
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
