//! Execution strategy for the data-parallel inner loops.
//!
//! With the `parallel` feature (default) the maps below run on rayon;
//! without it they degrade to plain sequential iteration. Callers always
//! receive results in input order, and every reduction in the crate folds
//! those ordered results sequentially, so both builds produce bit-identical
//! numbers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Ordered map over a slice.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
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

/// Ordered map over an index range; handy when borrowing several slices.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// True when compiled with rayon support.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
