use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HtfConfig, HtfModel, InputMap, Network, PinnConfig, PinnModel};
use crate::oracle::FieldGrid;
use crate::physics::DimensionlessProblem;

/// Architecture of both instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkConfig {
    Htf(HtfConfig),
    Pinn(PinnConfig),
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::Htf(HtfConfig::default())
    }
}

impl NetworkConfig {
    pub fn build(&self, seed: u64, map: InputMap) -> Result<Network> {
        Ok(match self {
            NetworkConfig::Htf(c) => Network::Htf(HtfModel::new(c.clone(), seed)?.with_input_map(map)),
            NetworkConfig::Pinn(c) => Network::Pinn(PinnModel::new(c.clone(), seed)?.with_input_map(map)),
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Anchors expanded into `K x T` token sequences.
    #[default]
    Sequence,
    /// Independent points, each its own one-token sequence.
    Pointwise,
}

impl std::str::FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(SamplingMode::Sequence),
            "pointwise" => Ok(SamplingMode::Pointwise),
            _ => Err(Error::invalid(format!("unknown sampling mode {s:?} (sequence|pointwise)"))),
        }
    }
}

/// Rectangular grid on which predictions are compared with the oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalGrid {
    pub x_max: f64,
    pub dx: f64,
    pub t_start: f64,
    pub dt: f64,
}

impl Default for EvalGrid {
    fn default() -> Self {
        Self { x_max: 5.0, dx: 0.05, t_start: 0.05, dt: 0.05 }
    }
}

impl EvalGrid {
    pub fn axes(&self, t_max: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((FieldGrid::axis(0.0, self.x_max, self.dx)?, FieldGrid::axis(self.t_start, t_max, self.dt)?))
    }
}

/// Per-instance input scaling.
pub fn input_maps(problem: &DimensionlessProblem, normalize: bool) -> (InputMap, InputMap) {
    if normalize {
        let l = problem.layer_bounds();
        let s = problem.substrate_bounds();
        (InputMap::for_box(l.lo, l.hi, problem.t_max), InputMap::for_box(s.lo, s.hi, problem.t_max))
    } else {
        (InputMap::default(), InputMap::default())
    }
}

/// Independent seed for one use (`stream`) of a run seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const STREAM_LAYER: u64 = 1;
pub(crate) const STREAM_SUBSTRATE: u64 = 2;
pub(crate) const STREAM_POINTS: u64 = 3;
