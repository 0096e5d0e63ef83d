//! Multi-threaded trajectory sampling.

use qfg_core::inference::{InferenceResult, SamplerCache, TrajectorySampler};
use qfg_core::{InferenceOptions, QuantumModel, Trajectory};
use rayon::prelude::*;

/// Same trajectories as [`qfg_core::sample_trajectories`], drawn on the rayon
/// pool. Each trajectory depends only on `(seed, index)`, so the result does
/// not depend on the thread count.
pub fn sample_trajectories_parallel(
    model: &QuantumModel,
    count: usize,
    seed: u64,
    opts: &InferenceOptions,
) -> InferenceResult<Vec<Trajectory>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let sampler = TrajectorySampler::new(model, *opts)?;
    (0..count as u64)
        .into_par_iter()
        .map_init(SamplerCache::default, |cache, i| sampler.trajectory(seed, i, cache))
        .collect()
}
