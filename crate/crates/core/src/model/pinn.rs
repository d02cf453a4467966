use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, push_affine, FieldModel, InputMap, ParamStore, TokenBatch};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Fully connected tanh network; `widths` includes the input (2) and
/// output (1) sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinnConfig {
    pub widths: Vec<usize>,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self { widths: vec![2, 512, 512, 512, 1] }
    }
}

impl PinnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths[0] != 2 || *self.widths.last().unwrap() != 1 {
            return Err(Error::config("fully connected widths must start at 2 and end at 1"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::config("all network widths must be at least 1"));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PinnRepr", into = "PinnRepr")]
pub struct PinnModel {
    config: PinnConfig,
    input_map: InputMap,
    params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct PinnRepr {
    config: PinnConfig,
    input_map: InputMap,
    params: ParamStore,
}

impl From<PinnModel> for PinnRepr {
    fn from(m: PinnModel) -> Self {
        Self { config: m.config, input_map: m.input_map, params: m.params }
    }
}

impl TryFrom<PinnRepr> for PinnModel {
    type Error = Error;

    fn try_from(r: PinnRepr) -> Result<Self> {
        let m = PinnModel::new(r.config, 0)?;
        if !m.params.same_layout(&r.params) {
            return Err(Error::config("stored parameters do not match the network configuration"));
        }
        Ok(Self { params: r.params, input_map: r.input_map, ..m })
    }
}

impl PinnModel {
    pub fn new(config: PinnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (i, w) in config.widths.windows(2).enumerate() {
            push_affine(&mut params, &mut rng, &format!("l{i}"), w[0], w[1]);
        }
        Ok(Self { config, input_map: InputMap::default(), params })
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input_map = map;
        self
    }

    pub fn config(&self) -> &PinnConfig {
        &self.config
    }
}

impl FieldModel for PinnModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::invalid("bound parameter count does not match the network"));
        }
        let mut h = g.constant(self.input_map.apply(batch.coords()))?;
        let layers = p.len() / 2;
        for i in 0..layers {
            h = affine(g, h, p[2 * i], p[2 * i + 1])?;
            if i + 1 < layers {
                h = g.tanh(h)?;
            }
        }
        Ok(h)
    }
}
