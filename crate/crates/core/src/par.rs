//! Order-preserving data parallelism with a sequential fallback.
//!
//! With the `parallel` feature (on by default) work is spread over a rayon
//! pool; without it every [`Execution`] runs sequentially. Results always come
//! back in input order.

/// How independent jobs are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool.
    #[default]
    Parallel,
    ParallelJobs(usize),
}

impl Execution {
    /// `Some(1)` means sequential, `Some(n)` caps the pool, `None` is the default.
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(0 | 1) => Execution::Sequential,
            Some(n) => Execution::ParallelJobs(n),
            None => Execution::Parallel,
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Execution::Sequential
    }
}

/// Maps `f` over `items`, returning results in the same order.
pub fn map_ordered<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => {}
            Execution::Parallel => return items.par_iter().map(&f).collect(),
            Execution::ParallelJobs(n) => {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    return pool.install(|| items.par_iter().map(&f).collect());
                }
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs two closures, concurrently when parallelism is available.
pub fn join<A, B, RA, RB>(exec: Execution, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return rayon::join(a, b);
    }
    #[cfg(not(feature = "parallel"))]
    let _ = exec;
    (a(), b())
}
