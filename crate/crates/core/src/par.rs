//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool.
//! Without it, or with a worker count of 1, everything runs on the calling
//! thread. Results are always returned in index order, so outputs never
//! depend on the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs indexed map jobs either on a private rayon pool or sequentially.
pub struct Executor {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("threads", &self.threads)
            .finish()
    }
}

impl Executor {
    /// `threads == 0` means one worker per available core.
    pub fn new(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        } else {
            threads
        };
        #[cfg(feature = "parallel")]
        {
            let pool = (threads > 1)
                .then(|| {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .ok()
                })
                .flatten();
            let threads = if pool.is_some() { threads } else { 1 };
            Self { threads, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Self { threads: 1 }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn is_parallel(&self) -> bool {
        self.threads > 1
    }

    /// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Like [`Executor::map`] but hands each worker a reusable scratch value
    /// built by `init`.
    pub fn map_init<S, T, I, F>(&self, n: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map_init(&init, &f).collect());
        }
        let mut scratch = init();
        (0..n).map(|i| f(&mut scratch, i)).collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(0)
    }
}
