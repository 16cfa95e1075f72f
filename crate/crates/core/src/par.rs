//! Data-parallel helpers with a sequential fallback.
//!
//! Work is cut into fixed-size chunks and chunk results are combined with a
//! fixed pairwise tree, so the floating-point result is the same whether the
//! chunks ran on one thread or many.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Runs on the rayon pool. Without the `parallel` feature this is the
    /// same as `Sequential`.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Applies `f` to consecutive chunks of `items` and returns the results in
/// chunk order.
pub fn map_chunks<T, R, F>(items: &[T], chunk_size: usize, exec: Exec, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk_size = chunk_size.max(1);
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => items.par_chunks(chunk_size).enumerate().map(|(i, c)| f(i * chunk_size, c)).collect(),
        _ => items.chunks(chunk_size).enumerate().map(|(i, c)| f(i * chunk_size, c)).collect(),
    }
}

/// Maps `f` over `0..n` preserving order.
pub fn map_indices<R, F>(n: usize, exec: Exec, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Sums equal-length vectors with a fixed balanced tree.
pub fn pairwise_sum_vecs(mut parts: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    if parts.is_empty() {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

/// Pairwise (cascade) summation of a slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
