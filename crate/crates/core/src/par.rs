//! Execution helpers: data-parallel maps over tree nodes and deterministic
//! reductions.
//!
//! All per-node work inside a time level is embarrassingly parallel, so the
//! hot loops go through [`for_each_chunk_mut`] / [`map_indexed`], which use
//! rayon when the `parallel` feature is enabled and fall back to plain
//! iterators otherwise. Reductions never happen inside the parallel region:
//! per-node contributions are collected in node order and summed with
//! [`pairwise_sum`], so results are bit-identical for any thread count.
//!
//! The `STOCHACT_THREADS` environment variable caps the pool size; unset
//! means the library default (rayon's global pool).

/// Minimum number of scalar elements in a level before a parallel map pays
/// for itself; below this the sequential path is used unconditionally.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 4096;

#[cfg(feature = "parallel")]
mod imp {
    use super::PAR_THRESHOLD;
    use rayon::prelude::*;
    use std::sync::OnceLock;

    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();

    /// Dedicated pool when `STOCHACT_THREADS` is set, `None` for the global one.
    fn pool() -> &'static Option<rayon::ThreadPool> {
        POOL.get_or_init(|| {
            let cap = std::env::var("STOCHACT_THREADS")
                .ok()
                .and_then(|v| v.trim().parse::<usize>().ok())
                .filter(|&v| v >= 1);
            cap.map(|threads| {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("failed to build thread pool")
            })
        })
    }

    fn install<R: Send>(work: impl FnOnce() -> R + Send) -> R {
        match pool() {
            Some(p) => p.install(work),
            None => work(),
        }
    }

    /// Applies `f(index, chunk)` to each `chunk`-sized window of `out`.
    pub fn for_each_chunk_mut<F>(out: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        if out.len() < PAR_THRESHOLD {
            for (i, c) in out.chunks_mut(chunk).enumerate() {
                f(i, c);
            }
        } else {
            install(|| {
                out.par_chunks_mut(chunk)
                    .enumerate()
                    .for_each(|(i, c)| f(i, c));
            });
        }
    }

    /// Same as [`for_each_chunk_mut`] over three equally chunked buffers.
    pub fn for_each_chunk3_mut<F>(
        a: &mut [f64],
        b: &mut [f64],
        c: &mut [f64],
        chunk: usize,
        f: F,
    ) where
        F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync + Send,
    {
        if a.len() < PAR_THRESHOLD {
            for (i, ((ca, cb), cc)) in a
                .chunks_mut(chunk)
                .zip(b.chunks_mut(chunk))
                .zip(c.chunks_mut(chunk))
                .enumerate()
            {
                f(i, ca, cb, cc);
            }
        } else {
            install(|| {
                a.par_chunks_mut(chunk)
                    .zip(b.par_chunks_mut(chunk))
                    .zip(c.par_chunks_mut(chunk))
                    .enumerate()
                    .for_each(|(i, ((ca, cb), cc))| f(i, ca, cb, cc));
            });
        }
    }

    /// Collects `f(0..count)` in index order.
    pub fn map_indexed<T, F>(count: usize, grain: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if count * grain.max(1) < PAR_THRESHOLD {
            (0..count).map(f).collect()
        } else {
            install(|| (0..count).into_par_iter().map(f).collect())
        }
    }

    /// Runs `work` inside a freshly built pool of `threads` threads.
    /// Test and bench helper for comparing thread counts.
    pub fn run_with_threads<R: Send>(threads: usize, work: impl FnOnce() -> R + Send) -> R {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("failed to build thread pool")
            .install(work)
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    /// Sequential fallback: identical semantics, plain iterators.
    pub fn for_each_chunk_mut<F>(out: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        for (i, c) in out.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }

    pub fn for_each_chunk3_mut<F>(a: &mut [f64], b: &mut [f64], c: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64], &mut [f64], &mut [f64]) + Sync + Send,
    {
        for (i, ((ca, cb), cc)) in a
            .chunks_mut(chunk)
            .zip(b.chunks_mut(chunk))
            .zip(c.chunks_mut(chunk))
            .enumerate()
        {
            f(i, ca, cb, cc);
        }
    }

    pub fn map_indexed<T, F>(count: usize, _grain: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).map(f).collect()
    }

    pub fn run_with_threads<R: Send>(_threads: usize, work: impl FnOnce() -> R + Send) -> R {
        work()
    }
}

pub use imp::{for_each_chunk3_mut, for_each_chunk_mut, map_indexed, run_with_threads};

/// Pairwise (cascade) summation in a fixed order.
///
/// Used for every expectation and inner-product reduction so that results do
/// not depend on the thread count and carry an O(log n) rounding error.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
