//! Worker fan-out with results returned in index order.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Serial execution or a dedicated rayon pool of fixed size.
pub struct Parallelism {
    pool: Option<rayon::ThreadPool>,
    threads: usize,
}

impl Parallelism {
    pub fn serial() -> Self {
        Self {
            pool: None,
            threads: 1,
        }
    }

    /// `threads == 1` runs inline; `threads == 0` uses all available cores.
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        let threads = pool.current_num_threads();
        Ok(Self {
            pool: Some(pool),
            threads,
        })
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// `f(0), ..., f(n - 1)` in order, whatever the worker count.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

impl std::fmt::Debug for Parallelism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Parallelism").field("threads", &self.threads).finish()
    }
}
