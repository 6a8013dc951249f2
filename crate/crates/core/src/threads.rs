//! Parallelism control.
//!
//! `CAPNAV_THREADS` selects the execution mode: `0` or `1` forces the pure
//! sequential code path (the deterministic preset), any larger value sizes the
//! rayon pool, unset leaves rayon's default. Parallel sections are written so
//! results are reduced in index order, which keeps outputs identical across
//! modes; the env var exists so single-threaded runs can be guaranteed.

use std::sync::OnceLock;

static MODE: OnceLock<usize> = OnceLock::new();

/// Number of worker threads in effect (1 = sequential path).
pub fn worker_count() -> usize {
    *MODE.get_or_init(|| {
        match std::env::var("CAPNAV_THREADS") {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(0) | Ok(1) => 1,
                Ok(n) => {
                    // Build a bounded global pool; ignore failure if one exists.
                    let _ = rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build_global();
                    n
                }
                Err(_) => 1,
            },
            Err(_) => rayon::current_num_threads(),
        }
    })
}

/// True when parallel sections should use rayon.
pub fn parallel() -> bool {
    worker_count() > 1
}

/// Map `0..n` through `f`, in parallel when enabled, preserving index order.
pub fn indexed_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if parallel() {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}
