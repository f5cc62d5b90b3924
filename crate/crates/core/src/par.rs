//! Switch between rayon and sequential iteration.
//!
//! Every helper here partitions work so that each output element is owned by
//! exactly one task and reductions use fixed-size chunks combined in index
//! order. Thread count therefore never changes a result.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many items the sequential path is used even when parallel.
pub const MIN_PARALLEL: usize = 256;

/// Chunk size for deterministic reductions.
pub const REDUCE_CHUNK: usize = 1024;

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_collect<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_collect_min(n, MIN_PARALLEL, f)
}

/// Like [`map_collect`] with an explicit threshold; use a small threshold
/// when each item is itself expensive.
pub fn map_collect_min<T, F>(n: usize, min_parallel: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= min_parallel.max(2) {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = min_parallel;
    (0..n).map(f).collect()
}

/// Maps over a slice of items, possibly in parallel, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        return items.par_iter().map(f).collect();
    }
    #[allow(unreachable_code)]
    items.iter().map(f).collect()
}

/// Calls `f(row_index, row)` for every `width`-sized row of `data`.
pub fn for_each_row<F>(data: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        if data.len() / width >= MIN_PARALLEL {
            data.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
            return;
        }
    }
    data.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Applies `f` elementwise in place.
pub fn map_inplace<F>(data: &mut [f64], f: F)
where
    F: Fn(f64) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() >= MIN_PARALLEL * 16 {
            data.par_iter_mut().for_each(|x| *x = f(*x));
            return;
        }
    }
    data.iter_mut().for_each(|x| *x = f(*x));
}

/// Deterministic chunked sum of `f(i)` over `0..n` into a vector of `width`.
///
/// Partial sums are formed over fixed chunks of `REDUCE_CHUNK` indices and
/// then added in chunk order, regardless of how chunks were scheduled.
pub fn chunked_sum<F>(n: usize, width: usize, f: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let n_chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| {
        let mut acc = vec![0.0; width];
        let end = ((c + 1) * REDUCE_CHUNK).min(n);
        for i in c * REDUCE_CHUNK..end {
            f(i, &mut acc);
        }
        acc
    };
    let partials = map_collect_min(n_chunks, 2, partial);
    let mut total = vec![0.0; width];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

/// Number of worker threads currently available.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        return rayon::current_num_threads();
    }
    #[allow(unreachable_code)]
    1
}
