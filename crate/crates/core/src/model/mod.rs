//! Networks that map `(x̄, t̄)` tokens to temperatures.

pub mod activation;
mod htf;
mod pinn;

pub use activation::ActivationKind;
pub use htf::{count_parameters, HtfConfig, HtfModel};
pub use pinn::{PinnConfig, PinnModel};

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, i: usize) -> &Array2<f64> {
        &self.values[i]
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    /// Records every array as a leaf: trainable parameters, or constants for
    /// a frozen instance.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<Vec<Var>> {
        self.values
            .iter()
            .map(|v| if trainable { g.param(v.clone()) } else { g.constant(v.clone()) })
            .collect()
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self.values.iter().zip(&other.values).all(|(a, b)| a.dim() == b.dim())
    }
}

/// Uniform `±1/sqrt(fan_in)` initialization for one affine layer.
pub(crate) fn push_affine<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) -> (usize, usize) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..=bound));
    let b = Array2::from_shape_fn((1, fan_out), |_| rng.gen_range(-bound..=bound));
    (store.push(format!("{name}.w"), w), store.push(format!("{name}.b"), b))
}

pub(crate) fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Fixed affine rescaling of raw coordinates before the first layer:
/// `(x - x_center) / x_half`, `(t - t_center) / t_half`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputMap {
    pub x_center: f64,
    pub x_half: f64,
    pub t_center: f64,
    pub t_half: f64,
}

impl Default for InputMap {
    fn default() -> Self {
        Self { x_center: 0.0, x_half: 1.0, t_center: 0.0, t_half: 1.0 }
    }
}

impl InputMap {
    /// Maps `[x_lo, x_hi] x [0, t_max]` onto `[-1, 1]²`.
    pub fn for_box(x_lo: f64, x_hi: f64, t_max: f64) -> Self {
        Self {
            x_center: 0.5 * (x_lo + x_hi),
            x_half: 0.5 * (x_hi - x_lo),
            t_center: 0.5 * t_max,
            t_half: 0.5 * t_max,
        }
    }

    pub fn apply(&self, coords: &Array2<f64>) -> Array2<f64> {
        let mut out = coords.clone();
        for mut row in out.rows_mut() {
            row[0] = (row[0] - self.x_center) / self.x_half;
            row[1] = (row[1] - self.t_center) / self.t_half;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.x_center, self.x_half, self.t_center, self.t_half].iter().all(|v| v.is_finite())
            && self.x_half > 0.0
            && self.t_half > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config("input map needs finite centers and positive half-widths"))
        }
    }
}

/// Tokens `(x̄, t̄)` grouped into consecutive sequences. Attention mixes
/// tokens only within a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    coords: Array2<f64>,
    segments: Arc<Vec<usize>>,
}

impl TokenBatch {
    pub fn new(coords: Array2<f64>, segments: Vec<usize>) -> Result<Self> {
        if coords.ncols() != 2 {
            return Err(Error::invalid(format!("tokens need 2 coordinates, got {}", coords.ncols())));
        }
        if coords.nrows() == 0 {
            return Err(Error::invalid("empty token batch"));
        }
        if segments.iter().any(|&l| l == 0) || segments.iter().sum::<usize>() != coords.nrows() {
            return Err(Error::invalid(format!(
                "sequence lengths sum to {}, batch has {} tokens",
                segments.iter().sum::<usize>(),
                coords.nrows()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("token coordinates".into()));
        }
        Ok(Self { coords, segments: Arc::new(segments) })
    }

    /// Every token is its own length-1 sequence.
    pub fn pointwise(coords: Array2<f64>) -> Result<Self> {
        let n = coords.nrows();
        Self::new(coords, vec![1; n])
    }

    /// Builds a batch from explicit sequences of points.
    pub fn from_sequences<'a>(seqs: impl IntoIterator<Item = &'a [(f64, f64)]>) -> Result<Self> {
        let mut flat = Vec::new();
        let mut segs = Vec::new();
        for s in seqs {
            segs.push(s.len());
            for &(x, t) in s {
                flat.push(x);
                flat.push(t);
            }
        }
        let n = flat.len() / 2;
        let coords = Array2::from_shape_vec((n, 2), flat).expect("pairs");
        Self::new(coords, segs)
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn segments(&self) -> &Arc<Vec<usize>> {
        &self.segments
    }

    /// Concatenates batches; returns the combined batch and the first row of
    /// each part.
    pub fn concat(parts: &[&TokenBatch]) -> Result<(TokenBatch, Vec<usize>)> {
        let views: Vec<_> = parts.iter().map(|p| p.coords.view()).collect();
        let coords = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|_| Error::invalid("cannot concatenate empty batch list"))?;
        let mut segs = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        let mut off = 0;
        for p in parts {
            offsets.push(off);
            off += p.len();
            segs.extend_from_slice(&p.segments);
        }
        Ok((Self::new(coords, segs)?, offsets))
    }

    /// Reorders tokens; `perm[i]` is the source row of output row `i`. The
    /// permutation must keep every token inside its own sequence.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::invalid("permutation length differs from batch length"));
        }
        let coords = Array2::from_shape_fn(self.coords.dim(), |(i, j)| self.coords[[perm[i], j]]);
        Ok(Self { coords, segments: self.segments.clone() })
    }
}

/// A network that can be recorded into a graph.
pub trait FieldModel {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass and returns an `n x 1` value.
    fn forward(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch) -> Result<Var>;

    /// Inference without recording gradients for the parameters.
    fn predict(&self, batch: &TokenBatch) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params().bind(&mut g, false)?;
        let y = self.forward(&mut g, &p, batch)?;
        let v = g.value(y);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(v.iter().copied().collect())
    }
}

/// Either network family, for storage and dispatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Network {
    Htf(HtfModel),
    Pinn(PinnModel),
}

impl FieldModel for Network {
    fn params(&self) -> &ParamStore {
        match self {
            Network::Htf(m) => m.params(),
            Network::Pinn(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::Htf(m) => m.params_mut(),
            Network::Pinn(m) => m.params_mut(),
        }
    }

    fn forward(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch) -> Result<Var> {
        match self {
            Network::Htf(m) => m.forward(g, p, batch),
            Network::Pinn(m) => m.forward(g, p, batch),
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "htf-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: JSON with every float written in shortest round-trip form,
/// so a load reproduces the parameters bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub networks: Vec<Network>,
}

impl Checkpoint {
    pub fn new(networks: Vec<Network>) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, networks }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }
}
