//! Rayon-backed execution. Work is split by index so results never depend on
//! the number of threads.

use htmc_core::chains::MixtureModel;
use htmc_core::hitting::{HittingTimeAccumulator, HittingTimeEstimate};
use htmc_core::mixture::Executor;
use htmc_core::simulate::{sample_mixture_trail, Trail, TrailExtent};
use rayon::prelude::*;

use crate::error::{Failure, Result};

/// Trails per accumulator in [`estimate`]; fixed so that the floating-point
/// summation order is the same for any pool size.
pub const ESTIMATE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// `None` or `Some(0)` lets rayon pick.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::param(format!("cannot start thread pool: {e}")))
}

/// Same trails as the sequential sampler given the same base seed.
pub fn simulate(mixture: &MixtureModel, count: usize, extent: TrailExtent, base_seed: u64) -> Result<Vec<Trail>> {
    if count == 0 {
        return Err(Failure::param("trail count must be >= 1"));
    }
    (0..count as u64)
        .into_par_iter()
        .map(|i| sample_mixture_trail(mixture, extent, base_seed, i).map_err(Failure::from))
        .collect()
}

pub fn estimate(trails: &[Trail], n: usize) -> Result<HittingTimeEstimate> {
    let parts: Vec<HittingTimeAccumulator> = trails
        .par_chunks(ESTIMATE_CHUNK)
        .map(|chunk| {
            let mut acc = HittingTimeAccumulator::new(n);
            for t in chunk {
                acc.add_trail(t)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = HittingTimeAccumulator::new(n);
    for p in &parts {
        total.merge(p)?;
    }
    Ok(total.finish())
}
