//! Deterministic fan-out over independent work items.
//!
//! Results are always collected in index order, so output never depends on
//! scheduling. With the `parallel` feature the work runs on the rayon pool,
//! whose size can be capped via `MCMR_THREADS` (see [`init_thread_pool`]).

#[cfg(feature = "parallel")]
pub fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Configure the global worker pool from `MCMR_THREADS` (0 or unset = auto).
/// Safe to call more than once; only the first call has an effect.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    {
        let threads = std::env::var("MCMR_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}
