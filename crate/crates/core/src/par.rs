//! Fixed-order parallel reductions: rows are summed in index order inside
//! fixed-size blocks, then the block partials are combined in block order.
//! The result is bit-identical for any number of worker threads.

use rayon::prelude::*;

pub const BLOCK: usize = 2048;

/// Reduce `0..n` by mapping each fixed block to a partial and folding the
/// partials left to right.
pub fn block_reduce<T, M, C>(n: usize, map_block: M, combine: C) -> Option<T>
where
    T: Send,
    M: Fn(std::ops::Range<usize>) -> T + Sync,
    C: Fn(T, T) -> T,
{
    let blocks = n.div_ceil(BLOCK);
    let partials: Vec<T> = (0..blocks)
        .into_par_iter()
        .map(|b| map_block(b * BLOCK..((b + 1) * BLOCK).min(n)))
        .collect();
    partials.into_iter().reduce(combine)
}

/// Sum of `f(i)` over `0..n` with a deterministic association order.
pub fn sum_f64<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    block_reduce(n, |r| r.map(&f).sum::<f64>(), |a, b| a + b).unwrap_or(0.0)
}

/// Sum and sum of squares of `f(i)`, for a mean with its standard error.
pub fn sum_sq_f64<F>(n: usize, f: F) -> (f64, f64)
where
    F: Fn(usize) -> f64 + Sync,
{
    block_reduce(
        n,
        |r| r.map(&f).fold((0.0, 0.0), |(s, q), v| (s + v, q + v * v)),
        |a, b| (a.0 + b.0, a.1 + b.1),
    )
    .unwrap_or((0.0, 0.0))
}

/// Elementwise vector sum of `f(i, acc)` accumulations of length `len`.
pub fn sum_vec<F>(n: usize, len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    block_reduce(
        n,
        |r| {
            let mut acc = vec![0.0; len];
            for i in r {
                f(i, &mut acc);
            }
            acc
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    )
    .unwrap_or_else(|| vec![0.0; len])
}
