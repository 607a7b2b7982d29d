//! Thin dispatch layer between rayon and sequential execution.
//!
//! With the `parallel` feature (default) the `map`/`map_indices` helpers run
//! on the rayon global pool; without it they compile to plain iterator
//! chains. The `*_seq` variants are always sequential and exist so the bench
//! suite can compare both paths in one binary. All helpers preserve input
//! order, and callers keep floating-point reductions sequential, so results
//! are identical with and without the feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Work-size threshold below which the parallel variants stay sequential.
/// Fork/join overhead dominates tiny kernels (mini test networks).
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..n`, in parallel when the per-item `work` estimate makes
/// it worthwhile.
pub fn map_indices<U, F>(n: usize, work: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n.saturating_mul(work) >= MIN_PARALLEL_WORK && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = work;
    (0..n).map(f).collect()
}

pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
