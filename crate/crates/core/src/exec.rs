//! Data-parallel execution helpers.
//!
//! Every helper has a rayon implementation (feature `parallel`) and a
//! sequential one. Work is split on fixed boundaries that do not depend on
//! the thread count, so floating-point reductions happen in the same order in
//! both builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk length for ordered reductions.
pub const REDUCE_CHUNK: usize = 64;

/// True when compiled with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Evaluates `f` on `0..n` and collects the results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
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

/// Sequential twin of [`map_range`], always available (benchmarks compare the two).
pub fn map_range_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Calls `f(row_index, row)` for every `width`-wide row of `data`.
pub fn for_each_row<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for_each_row_seq(data, width, f);
    }
}

/// Sequential twin of [`for_each_row`].
pub fn for_each_row_seq<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    if width == 0 {
        return;
    }
    for (i, row) in data.chunks_mut(width).enumerate() {
        f(i, row);
    }
}

/// Folds `0..n` in chunks of [`REDUCE_CHUNK`] and merges the chunk
/// accumulators left to right.
pub fn chunked_reduce<A, I, F, M>(n: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync + Send,
    F: Fn(&mut A, usize) + Sync + Send,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_range(chunks, |c| {
        let mut acc = init();
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        for i in lo..hi {
            fold(&mut acc, i);
        }
        acc
    });
    let mut total = init();
    for part in partials {
        merge(&mut total, part);
    }
    total
}
