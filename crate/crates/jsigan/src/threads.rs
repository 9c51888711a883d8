//! Worker-thread cap.
//!
//! `JSI_THREADS` (read by the CLI, or [`set_threads`] from code) caps data
//! parallelism; `0` selects the sequential deterministic mode. Parallel
//! sections only ever split work into disjoint output regions whose per-
//! element arithmetic is identical in both modes, so results are bit-exact
//! regardless of the setting.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

static THREAD_CAP: AtomicUsize = AtomicUsize::new(0);

/// Cap worker threads. `0` means sequential. Values above 1 configure the
/// global rayon pool on first use (later calls can only lower the cap).
pub fn set_threads(n: usize) {
    if n > 1 {
        // Ignore the error when a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    THREAD_CAP.store(n, Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREAD_CAP.load(Ordering::Relaxed)
}

/// Apply `f` to equal-sized per-sample output chunks, in parallel when the
/// thread cap allows. Chunks are disjoint, so scheduling cannot change bits.
pub(crate) fn for_each_sample<T: Send, F>(data: &mut [T], chunk: usize, f: F)
where
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert_eq!(data.len() % chunk.max(1), 0);
    if threads() > 1 && data.len() / chunk.max(1) > 1 {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        for (i, c) in data.chunks_mut(chunk).enumerate() {
            f(i, c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_parallel_bits_match() {
        let run = |threads: usize| {
            set_threads(threads);
            let mut out = vec![0.0f64; 64];
            for_each_sample(&mut out, 16, |i, chunk| {
                for (j, v) in chunk.iter_mut().enumerate() {
                    *v = ((i * 31 + j) as f64 * 0.77).sin().exp();
                }
            });
            set_threads(0);
            out
        };
        let seq = run(0);
        let par = run(2);
        assert_eq!(seq, par);
    }
}
