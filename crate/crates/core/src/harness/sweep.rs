//! Seed and config sweeps. Each experiment is independent and
//! single-threaded, so sweeps parallelize over experiments; with the
//! `parallel` feature off they run in order on the calling thread.

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::{run_experiment, Summary};

/// Maps `f` over `items` in order.
pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` on the rayon pool; output keeps input order.
#[cfg(feature = "parallel")]
pub fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Parallel when the `parallel` feature is on, sequential otherwise.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_parallel(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(items, f)
    }
}

/// Runs every config and returns the summaries in input order.
pub fn sweep(configs: &[ExperimentConfig]) -> Vec<Result<Summary>> {
    map(configs, |c| run_experiment(c).map(|r| r.summary))
}

/// Copies of `base`, one per seed.
pub fn with_seeds(base: &ExperimentConfig, seeds: impl IntoIterator<Item = u64>) -> Vec<ExperimentConfig> {
    seeds
        .into_iter()
        .map(|seed| {
            let mut c = base.clone();
            c.engine.seed = seed;
            c
        })
        .collect()
}
