//! Worker pools and reproducible reductions.
//!
//! Kernels parallelize with rayon inside whatever pool is current. Callers
//! that need a specific worker count wrap the call in [`with_workers`].
//! Reductions split the index range into fixed-size chunks, so the
//! association order depends only on the problem size and never on the
//! number of workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;

/// Indices summed sequentially before entering the pairwise tree.
pub const REDUCTION_CHUNK: usize = 1024;

/// Build a dedicated pool with `threads` workers (0 means rayon's default).
pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build worker pool: {e}")))
}

/// Run `f` on a fresh pool of `threads` workers.
pub fn with_workers<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    Ok(pool(threads)?.install(f))
}

/// Deterministic sum of `term(i)` for `i in 0..len`.
pub fn det_sum<T: Real>(len: usize, term: impl Fn(usize) -> T + Sync) -> T {
    let chunks = len.div_ceil(REDUCTION_CHUNK);
    let partial: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCTION_CHUNK;
            let hi = (lo + REDUCTION_CHUNK).min(len);
            let mut acc = T::zero();
            for i in lo..hi {
                acc += term(i);
            }
            acc
        })
        .collect();
    pairwise(&partial)
}

/// Deterministic dot product.
pub fn det_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    det_sum(a.len(), |i| a[i] * b[i])
}

/// Infinity norm; max is order independent so no special care is needed.
pub fn norm_inf<T: Real>(a: &[T]) -> T {
    a.par_iter()
        .map(|v| v.abs())
        .reduce(T::zero, |x, y| if y > x { y } else { x })
}

fn pairwise<T: Real>(v: &[T]) -> T {
    match v.len() {
        0 => T::zero(),
        1 => v[0],
        n => {
            let mid = n / 2;
            pairwise(&v[..mid]) + pairwise(&v[mid..])
        }
    }
}
