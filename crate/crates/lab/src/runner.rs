//! Block-parallel replicate execution.
//!
//! Replicates are cut into fixed blocks of [`BLOCK_SIZE`]. Each block is
//! reduced on one worker and the block results are merged in block order, so
//! the output depends on the seed and replicate count but not on the number
//! of workers or on scheduling.

use rayon::prelude::*;

use crate::error::{config_error, Result};

pub const BLOCK_SIZE: u64 = 256;

/// Runs `block(start, end)` for each block of `0..replicates` on `workers`
/// threads and returns the block results in block order.
pub fn run_blocks<A, F>(replicates: u64, workers: usize, block: F) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(u64, u64) -> Result<A> + Sync,
{
    let blocks = replicates.div_ceil(BLOCK_SIZE);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| config_error(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        (0..blocks)
            .into_par_iter()
            .map(|b| block(b * BLOCK_SIZE, ((b + 1) * BLOCK_SIZE).min(replicates)))
            .collect()
    })
}

/// Runs the blocks and folds their results left to right with `merge`.
pub fn reduce_blocks<A, F, M>(replicates: u64, workers: usize, init: A, block: F, mut merge: M) -> Result<A>
where
    A: Send,
    F: Fn(u64, u64) -> Result<A> + Sync,
    M: FnMut(&mut A, &A),
{
    let parts = run_blocks(replicates, workers, block)?;
    let mut acc = init;
    for part in &parts {
        merge(&mut acc, part);
    }
    Ok(acc)
}
