//! Batch execution for independent Monte Carlo work.
//!
//! Each batch owns a ChaCha8 stream derived from `(seed, batch index)`, so
//! results are identical whichever execution mode runs them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Rayon thread pool when the `parallel` feature is enabled, sequential
    /// otherwise.
    #[default]
    Parallel,
}

/// The rng for batch `index` of a run seeded with `seed`.
pub fn batch_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs `f(index, rng)` for every batch and returns results in batch order.
pub fn map_batches<T, F>(exec: Execution, seed: u64, batches: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync + Send,
{
    let run = |b: usize| {
        let mut rng = batch_rng(seed, b as u64);
        f(b, &mut rng)
    };
    match exec {
        Execution::Sequential => (0..batches).map(run).collect(),
        Execution::Parallel => parallel_map(batches, run),
    }
}

/// Splits `total` draws into batches of at most `batch_size`.
pub fn batch_sizes(total: usize, batch_size: usize) -> Vec<usize> {
    let batch_size = batch_size.max(1);
    let mut out = vec![batch_size; total / batch_size];
    if !total.is_multiple_of(batch_size) {
        out.push(total % batch_size);
    }
    out
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}
