//! Thread-parallel ensembles with results independent of the thread count.
//!
//! Trajectories are grouped into fixed chunks, each chunk is accumulated
//! sequentially, and the chunk accumulators are merged in chunk order. The
//! floating-point result therefore depends only on the chunk size.

use rayon::prelude::*;
use stochsn_core::ensemble::{DensityAccumulator, EnsembleConfig, EnsembleResult, Prepared};
use stochsn_core::{Result, SimParams};

pub const CHUNK: usize = 32;

pub fn run_prepared(prep: &Prepared) -> Result<EnsembleResult> {
    let n = prep.cfg.n_trajectories;
    let parts: Vec<Result<DensityAccumulator>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = prep.accumulator();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc.absorb(prep.run_trajectory(i as u64))?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = prep.accumulator();
    for part in parts {
        total.merge(&part?);
    }
    total.finish(prep.cfg.max_failure_fraction)
}

pub fn run_ensemble(params: &SimParams, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    run_prepared(&Prepared::new(params, cfg)?)
}

/// Run `f` on a pool capped at `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool").install(f),
        None => f(),
    }
}
