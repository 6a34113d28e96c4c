//! Batch execution helpers.
//!
//! Every batch loop in the crate goes through [`Parallelism::map`] so that the
//! sequential and rayon paths run the same closure over the same index set.
//! Results are always returned in index order, so output never depends on the
//! execution strategy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    #[default]
    Parallel,
}

impl Parallelism {
    /// `Parallel` when the crate was built with rayon, otherwise `Sequential`.
    pub fn available() -> Self {
        if cfg!(feature = "rayon") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }

    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "rayon")]
            Parallelism::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible map; the first failing index (lowest, not first-to-finish) is
    /// reported, wrapped with its batch position.
    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        let results = self.map(n, f);
        let mut out = Vec::with_capacity(n);
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(e) => return Err(wrap(e, k)),
            }
        }
        Ok(out)
    }

    /// Like [`Parallelism::map`] but hands each closure exclusive access to one
    /// element of `items`.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        match self {
            #[cfg(feature = "rayon")]
            Parallelism::Parallel => {
                use rayon::prelude::*;
                items.par_iter_mut().enumerate().for_each(|(k, x)| f(k, x));
            }
            _ => items.iter_mut().enumerate().for_each(|(k, x)| f(k, x)),
        }
    }
}

fn wrap(e: Error, k: usize) -> Error {
    match e {
        Error::Batch { .. } => e,
        other => other.in_batch(k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let f = |k: usize| (k as f64).sqrt().sin();
        let a = Parallelism::Sequential.map(257, f);
        let b = Parallelism::Parallel.map(257, f);
        assert_eq!(a, b);
    }

    #[test]
    fn try_map_reports_lowest_failing_index() {
        let r = Parallelism::Parallel.try_map(10, |k| {
            if k == 3 || k == 7 {
                Err(Error::invalid("boom"))
            } else {
                Ok(k)
            }
        });
        match r {
            Err(Error::Batch { index, .. }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
