//! Order-preserving map over instance indices.
//!
//! With the `parallel` feature and more than one thread, work runs on a
//! dedicated rayon pool; otherwise it runs inline. Results always come back
//! in index order, so any reduction over them is independent of scheduling.

use crate::error::{Error, Result};

pub struct Executor {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            threads: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// An executor capped at `threads` workers. Without the `parallel`
    /// feature every request degrades to sequential execution.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidArgument("thread count must be at least 1".into()));
        }
        #[cfg(feature = "parallel")]
        {
            if threads > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
                return Ok(Executor {
                    threads,
                    pool: Some(pool),
                });
            }
        }
        Ok(Executor::sequential())
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_in_index_order() {
        for threads in [1, 2, 4] {
            let ex = Executor::new(threads).unwrap();
            assert_eq!(ex.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_threads_is_rejected() {
        assert!(Executor::new(0).is_err());
    }
}
