//! Data-parallel helpers with a sequential fallback.
//!
//! Every parallel path in the crate goes through [`Exec`], so results are
//! bit-identical whichever strategy runs: work items are independent and all
//! reductions happen afterwards, in index order, on the calling thread.

/// Execution strategy for per-item work (samples in a batch, frames in a
/// stream, seeds in a protocol).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is disabled.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Map `f` over `0..n`, returning results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if n > 1 => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Apply `f` to every element of `items` in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if items.len() > 1 => {
                use rayon::prelude::*;
                items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
            }
            _ => items.iter_mut().enumerate().for_each(|(i, x)| f(i, x)),
        }
    }

    /// Fallible map; the first error in index order wins.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Exec::Sequential.map(1000, f);
        let b = Exec::Parallel.map(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn for_each_mut_visits_in_place() {
        let mut v = vec![0usize; 64];
        Exec::Parallel.for_each_mut(&mut v, |i, x| *x = i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
