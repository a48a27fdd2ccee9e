//! Data-parallel execution with a sequential fallback.
//!
//! Work is always split into the same fixed chunks and results come back in
//! chunk order, so reductions over them are bit-identical whether or not the
//! `parallel` feature is enabled and regardless of thread count.

/// How chunked work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecPolicy {
    /// Rayon when the `parallel` feature is on, otherwise sequential.
    #[default]
    Auto,
    Sequential,
}

impl ExecPolicy {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecPolicy::Auto
    }
}

/// Splits `0..n` into ranges of at most `chunk` items.
pub fn chunk_ranges(n: usize, chunk: usize) -> Vec<std::ops::Range<usize>> {
    let chunk = chunk.max(1);
    (0..n).step_by(chunk).map(|s| s..(s + chunk).min(n)).collect()
}

/// Applies `f` to each item, returning results in input order.
pub fn map_ordered<T, U, F>(policy: ExecPolicy, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if policy.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
    }
    let _ = policy;
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_everything_once() {
        let r = chunk_ranges(10, 4);
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert!(chunk_ranges(0, 3).is_empty());
    }

    #[test]
    fn both_policies_agree() {
        let items: Vec<u64> = (0..100).collect();
        let a = map_ordered(ExecPolicy::Auto, &items, |x| x * x);
        let b = map_ordered(ExecPolicy::Sequential, &items, |x| x * x);
        assert_eq!(a, b);
    }
}
