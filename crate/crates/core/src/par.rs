//! Data-parallel map over independent jobs (utterances, seeds, chunks).
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, or with [`Execution::Sequential`], jobs run in order on the
//! calling thread. Results always come back in input order.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether `Parallel` actually fans out in this build.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

#[cfg(feature = "parallel")]
pub fn map<I, R, F>(items: &[I], exec: Execution, f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Send + Sync,
{
    use rayon::prelude::*;
    match exec {
        Execution::Parallel => items.par_iter().enumerate().map(|(i, it)| f(i, it)).collect(),
        Execution::Sequential => items.iter().enumerate().map(|(i, it)| f(i, it)).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<I, R, F>(items: &[I], _exec: Execution, f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(usize, &I) -> R + Send + Sync,
{
    items.iter().enumerate().map(|(i, it)| f(i, it)).collect()
}

/// `map` over `0..n`.
pub fn map_range<R, F>(n: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    let idx: Vec<usize> = (0..n).collect();
    map(&idx, exec, |_, &i| f(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let seq = map(&items, Execution::Sequential, |i, &v| v * 3 + i as u64);
        let par = map(&items, Execution::Parallel, |i, &v| v * 3 + i as u64);
        assert_eq!(seq, par);
        assert_eq!(seq[10], 40);
    }
}
