//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan out over rayon's
//! global pool; without it, or inside [`sequential`], they run on the calling
//! thread. Every helper produces identical output in both modes: work is split
//! into fixed-size chunks and partial results are combined in chunk order.

use std::cell::Cell;

/// Chunk length used by the deterministic reductions.
pub const REDUCE_CHUNK: usize = 4096;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with all helpers forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            FORCE_SEQUENTIAL.with(|c| c.set(self.0));
        }
    }
    let prev = FORCE_SEQUENTIAL.with(|c| c.replace(true));
    let _reset = Reset(prev);
    f()
}

/// Whether helpers called from this thread will run in parallel.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

/// `(0..n).map(f)` collected in order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` on consecutive `chunk`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Order-preserving filter over a slice of items.
pub fn filter<T, F>(items: &[T], keep: F) -> Vec<T>
where
    T: Copy + Send + Sync,
    F: Fn(T) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() && items.len() > REDUCE_CHUNK {
        use rayon::prelude::*;
        return items.par_iter().copied().filter(|&t| keep(t)).collect();
    }
    items.iter().copied().filter(|&t| keep(t)).collect()
}

/// Sums `N` per-index terms over `0..n` with a fixed reduction tree, so the
/// result is bit-identical regardless of thread count.
pub fn sum_n<const N: usize, F>(n: usize, term: F) -> [f64; N]
where
    F: Fn(usize) -> [f64; N] + Sync + Send,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let partials = map_indexed(chunks, |c| {
        let start = c * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        let mut acc = [0.0; N];
        for i in start..end {
            let t = term(i);
            for k in 0..N {
                acc[k] += t[k];
            }
        }
        acc
    });
    let mut total = [0.0; N];
    for p in partials {
        for k in 0..N {
            total[k] += p[k];
        }
    }
    total
}
