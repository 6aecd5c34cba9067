//! Execution policy for the data-parallel loops.
//!
//! Work is always split into fixed-size chunks whose boundaries do not depend
//! on the thread count, so per-chunk results are identical across runs. In
//! deterministic mode chunk results are reduced in index order; fast mode
//! lets the pool combine them in whatever order it schedules.
//!
//! Without the `parallel` feature every loop runs sequentially and the two
//! modes coincide.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecPolicy {
    pub parallel: bool,
    pub deterministic: bool,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        Self {
            parallel: true,
            deterministic: true,
        }
    }
}

impl ExecPolicy {
    pub const SEQUENTIAL: ExecPolicy = ExecPolicy {
        parallel: false,
        deterministic: true,
    };

    pub fn fast() -> Self {
        Self {
            parallel: true,
            deterministic: false,
        }
    }

    /// Maps `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over `0..n` and folds the results with `combine`.
    ///
    /// Deterministic mode collects first and folds left to right.
    pub fn map_reduce<T, F, C>(&self, n: usize, identity: T, f: F, combine: C) -> T
    where
        T: Send + Clone + Sync,
        F: Fn(usize) -> T + Sync + Send,
        C: Fn(T, T) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.parallel && !self.deterministic {
            return (0..n)
                .into_par_iter()
                .map(f)
                .reduce(|| identity.clone(), &combine);
        }
        self.map(n, f).into_iter().fold(identity, combine)
    }
}

/// Number of chunks of size `chunk` needed to cover `n` items.
pub fn chunk_count(n: usize, chunk: usize) -> usize {
    n.div_ceil(chunk.max(1))
}

/// Configures the global rayon pool. Returns false if it was already built.
#[cfg(feature = "parallel")]
pub fn init_threads(threads: usize) -> bool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .is_ok()
}

#[cfg(not(feature = "parallel"))]
pub fn init_threads(_threads: usize) -> bool {
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let out = ExecPolicy::default().map(100, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_reduce_matches_sequential_bitwise() {
        let f = |i: usize| 1.0 / (i as f64 + 1.0);
        let a = ExecPolicy::default().map_reduce(1000, 0.0, f, |a, b| a + b);
        let b = ExecPolicy::SEQUENTIAL.map_reduce(1000, 0.0, f, |a, b| a + b);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn chunk_count_rounds_up() {
        assert_eq!(chunk_count(10, 3), 4);
        assert_eq!(chunk_count(9, 3), 3);
        assert_eq!(chunk_count(0, 3), 0);
    }
}
