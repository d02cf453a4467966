//! Optimization loops: forward training, two-stage identification, seed
//! sweeps and the two ablations.

mod ablation;
mod adam;
mod config;
mod forward;
mod inverse;
mod record;

pub use ablation::{ablation_config, run_activation_ablation, run_sampling_ablation, with_activation, SamplingAblation};
pub use adam::{AdamConfig, AdamState};
pub use config::{input_maps, stream_seed, EvalGrid, NetworkConfig, SamplingMode};
pub use forward::{forward_dataset, forward_plans, predict_field, train_forward, ForwardConfig, ForwardOutcome, FORWARD_EPOCHS};
pub use inverse::{multi_seed_statistics, train_inverse_two_stage, InverseConfig, InverseOutcome, InverseTrainer, SeedStatistics};
pub use record::{moving_average_ends, EpochLoss, RunRecord, RunStatus, Stage, TrajectoryPoint};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::MeasurementSet;

/// Environment variable capping the number of concurrent runs.
pub const THREADS_ENV: &str = "HTF_THREADS";

/// Worker pool for independent runs, sized by `HTF_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| Error::config(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::config(e.to_string()))
}

/// Independent inverse runs that differ only in the initialization seed.
pub fn inverse_sweep(base: &InverseConfig, measurements: &MeasurementSet, seeds: &[u64]) -> Result<Vec<InverseOutcome>> {
    let cfgs: Vec<InverseConfig> = seeds.iter().map(|&seed| InverseConfig { seed, ..base.clone() }).collect();
    worker_pool()?.install(|| cfgs.par_iter().map(|c| train_inverse_two_stage(c, measurements)).collect())
}
