use rayon::prelude::*;

use crate::error::{Error, Result};

/// Maps `f` over `0..count`, on `workers` threads when more than one, and
/// returns results in index order regardless of scheduling.
pub fn map_ordered<R, F>(workers: usize, count: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..count).into_par_iter().map(&f).collect())
}
