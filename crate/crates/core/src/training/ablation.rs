use rayon::prelude::*;

use super::config::{NetworkConfig, SamplingMode};
use super::forward::{check_budget, forward_dataset, train_forward, ForwardConfig, ForwardOutcome};
use super::worker_pool;
use crate::error::{Error, Result};
use crate::model::ActivationKind;
use crate::physics::DimensionlessProblem;

/// Base configuration of both ablations: cold start heated from the left.
pub fn ablation_config() -> ForwardConfig {
    ForwardConfig::new(DimensionlessProblem::heating())
}

pub struct SamplingAblation {
    pub sequence: ForwardOutcome,
    pub pointwise: ForwardOutcome,
}

fn with_sampling(base: &ForwardConfig, mode: SamplingMode) -> ForwardConfig {
    ForwardConfig { sampling: mode, ..base.clone() }
}

/// The same budget spent on anchor sequences and on independent points.
pub fn run_sampling_ablation(base: &ForwardConfig) -> Result<SamplingAblation> {
    let cfgs = [with_sampling(base, SamplingMode::Sequence), with_sampling(base, SamplingMode::Pointwise)];
    for c in &cfgs {
        check_budget(c, &forward_dataset(c, 0)?)?;
    }
    let mut runs = worker_pool()?.install(|| cfgs.par_iter().map(train_forward).collect::<Result<Vec<_>>>())?;
    let pointwise = runs.pop().expect("two runs");
    let sequence = runs.pop().expect("two runs");
    Ok(SamplingAblation { sequence, pointwise })
}

pub fn with_activation(base: &ForwardConfig, act: ActivationKind) -> Result<ForwardConfig> {
    match &base.network {
        NetworkConfig::Htf(h) => {
            let mut c = base.clone();
            let mut h = h.clone();
            h.activation = act;
            c.network = NetworkConfig::Htf(h);
            Ok(c)
        }
        NetworkConfig::Pinn(_) => Err(Error::config("the activation ablation needs the transformer network")),
    }
}

/// One run per activation, identical data and seeds otherwise.
pub fn run_activation_ablation(base: &ForwardConfig) -> Result<Vec<(ActivationKind, ForwardOutcome)>> {
    let cfgs = ActivationKind::ALL.iter().map(|&a| with_activation(base, a)).collect::<Result<Vec<_>>>()?;
    let runs = worker_pool()?.install(|| cfgs.par_iter().map(train_forward).collect::<Result<Vec<_>>>())?;
    Ok(ActivationKind::ALL.iter().copied().zip(runs).collect())
}
