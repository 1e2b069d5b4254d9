//! Worker-pool setup. `OMNITRAJ_THREADS` caps parallelism; results never
//! depend on the thread count because all reductions run in fixed order.

use once_cell::sync::Lazy;
use rayon::ThreadPool;

static POOL: Lazy<ThreadPool> = Lazy::new(|| {
    let threads = std::env::var("OMNITRAJ_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(num_cpus);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("worker pool")
});

fn num_cpus() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Runs `f` inside the shared worker pool.
pub fn run<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    POOL.install(f)
}
