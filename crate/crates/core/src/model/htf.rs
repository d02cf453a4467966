use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{affine, push_affine, ActivationKind, FieldModel, InputMap, ParamStore, TokenBatch};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HtfConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_hidden: usize,
    pub n_layers: usize,
    pub head_hidden: [usize; 2],
    pub activation: ActivationKind,
}

impl Default for HtfConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 4,
            d_hidden: 512,
            n_layers: 1,
            head_hidden: [512, 512],
            activation: ActivationKind::Laplace,
        }
    }
}

impl HtfConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.d_model, self.n_heads, self.d_hidden, self.head_hidden[0], self.head_hidden[1]];
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config("all network widths must be at least 1"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Number of trainable scalars for a configuration, from layer arithmetic.
pub fn count_parameters(c: &HtfConfig) -> usize {
    let aff = |i: usize, o: usize| i * o + o;
    let site = c.activation.params_per_site();
    let d = c.d_model;
    let block = 4 * aff(d, d) + aff(d, c.d_hidden) + aff(c.d_hidden, c.d_hidden) + aff(c.d_hidden, d) + 4 * site;
    let head = aff(d, c.head_hidden[0]) + aff(c.head_hidden[0], c.head_hidden[1]) + aff(c.head_hidden[1], 1) + 2 * site;
    aff(2, d) + c.n_layers * block + head
}

type Lin = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
struct Block {
    act_attn: usize,
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    act_ffn: usize,
    l1: Lin,
    act1: usize,
    l2: Lin,
    act2: usize,
    l3: Lin,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embed: Lin,
    blocks: Vec<Block>,
    h1: Lin,
    act_h1: usize,
    h2: Lin,
    act_h2: usize,
    out: Lin,
}

/// Transformer decoder surrogate: linear embedding, mask-free
/// pre-activation decoder blocks, and a two-hidden-layer regression head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HtfRepr", into = "HtfRepr")]
pub struct HtfModel {
    config: HtfConfig,
    input_map: InputMap,
    params: ParamStore,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct HtfRepr {
    config: HtfConfig,
    input_map: InputMap,
    params: ParamStore,
}

impl From<HtfModel> for HtfRepr {
    fn from(m: HtfModel) -> Self {
        Self { config: m.config, input_map: m.input_map, params: m.params }
    }
}

impl TryFrom<HtfRepr> for HtfModel {
    type Error = Error;

    fn try_from(r: HtfRepr) -> Result<Self> {
        r.input_map.validate()?;
        let mut m = HtfModel::new(r.config, 0)?;
        if !m.params.same_layout(&r.params) {
            return Err(Error::config("stored parameters do not match the network configuration"));
        }
        if r.params.values().iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("stored parameters".into()));
        }
        m.params = r.params;
        m.input_map = r.input_map;
        Ok(m)
    }
}

fn push_site(store: &mut ParamStore, name: &str, kind: ActivationKind) -> usize {
    let first = store.len();
    for (p, &v) in kind.param_names().iter().zip(kind.init_values()) {
        store.push(format!("{name}.{p}"), Array2::from_elem((1, 1), v));
    }
    first
}

impl HtfModel {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: HtfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, hid, kind) = (config.d_model, config.d_hidden, config.activation);
        let embed = push_affine(&mut s, &mut rng, "embed", 2, d);
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let act_attn = push_site(&mut s, &format!("block{i}.attn.act"), kind);
            let q = push_affine(&mut s, &mut rng, &format!("block{i}.attn.q"), d, d);
            let k = push_affine(&mut s, &mut rng, &format!("block{i}.attn.k"), d, d);
            let v = push_affine(&mut s, &mut rng, &format!("block{i}.attn.v"), d, d);
            let o = push_affine(&mut s, &mut rng, &format!("block{i}.attn.o"), d, d);
            let act_ffn = push_site(&mut s, &format!("block{i}.ffn.act"), kind);
            let l1 = push_affine(&mut s, &mut rng, &format!("block{i}.ffn.l1"), d, hid);
            let act1 = push_site(&mut s, &format!("block{i}.ffn.act1"), kind);
            let l2 = push_affine(&mut s, &mut rng, &format!("block{i}.ffn.l2"), hid, hid);
            let act2 = push_site(&mut s, &format!("block{i}.ffn.act2"), kind);
            let l3 = push_affine(&mut s, &mut rng, &format!("block{i}.ffn.l3"), hid, d);
            blocks.push(Block { act_attn, q, k, v, o, act_ffn, l1, act1, l2, act2, l3 });
        }
        let [w1, w2] = config.head_hidden;
        let h1 = push_affine(&mut s, &mut rng, "head.l1", d, w1);
        let act_h1 = push_site(&mut s, "head.act1", kind);
        let h2 = push_affine(&mut s, &mut rng, "head.l2", w1, w2);
        let act_h2 = push_site(&mut s, "head.act2", kind);
        let out = push_affine(&mut s, &mut rng, "head.out", w2, 1);
        let layout = Layout { embed, blocks, h1, act_h1, h2, act_h2, out };
        Ok(Self { config, input_map: InputMap::default(), params: s, layout })
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input_map = map;
        self
    }

    pub fn config(&self) -> &HtfConfig {
        &self.config
    }

    pub fn input_map(&self) -> &InputMap {
        &self.input_map
    }

    fn act(&self, g: &mut Graph, p: &[Var], site: usize, z: Var) -> Result<Var> {
        let n = self.config.activation.params_per_site();
        self.config.activation.apply(g, z, &p[site..site + n])
    }

    fn lin(g: &mut Graph, p: &[Var], l: Lin, x: Var) -> Result<Var> {
        affine(g, x, p[l.0], p[l.1])
    }

    /// Linear embedding of the (rescaled) coordinates.
    pub fn embed(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch) -> Result<Var> {
        let x = g.constant(self.input_map.apply(batch.coords()))?;
        Self::lin(g, p, self.layout.embed, x)
    }

    fn decoder_block(&self, g: &mut Graph, p: &[Var], b: &Block, z: Var, batch: &TokenBatch, trace: &mut Vec<Var>) -> Result<Var> {
        let d = self.config.d_model;
        if g.shape(z).1 != d {
            return Err(Error::ShapeMismatch { op: "decoder_block", left: g.shape(z), right: (g.shape(z).0, d) });
        }
        let a = self.act(g, p, b.act_attn, z)?;
        let q = Self::lin(g, p, b.q, a)?;
        let k = Self::lin(g, p, b.k, a)?;
        let v = Self::lin(g, p, b.v, a)?;
        let att = g.attention(q, k, v, batch.segments().clone(), self.config.n_heads)?;
        trace.push(att);
        let o = Self::lin(g, p, b.o, att)?;
        let z = g.add(z, o)?;
        let a = self.act(g, p, b.act_ffn, z)?;
        let h = Self::lin(g, p, b.l1, a)?;
        let h = self.act(g, p, b.act1, h)?;
        let h = Self::lin(g, p, b.l2, h)?;
        let h = self.act(g, p, b.act2, h)?;
        let f = Self::lin(g, p, b.l3, h)?;
        g.add(z, f)
    }

    fn forward_traced(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch, trace: &mut Vec<Var>) -> Result<Var> {
        if p.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "network expects {} bound parameters, got {}",
                self.params.len(),
                p.len()
            )));
        }
        let mut z = self.embed(g, p, batch)?;
        for b in &self.layout.blocks {
            z = self.decoder_block(g, p, b, z, batch, trace)?;
        }
        let l = &self.layout;
        let h = Self::lin(g, p, l.h1, z)?;
        let h = self.act(g, p, l.act_h1, h)?;
        let h = Self::lin(g, p, l.h2, h)?;
        let h = self.act(g, p, l.act_h2, h)?;
        Self::lin(g, p, l.out, h)
    }

    /// Attention weights of every decoder block, each indexed
    /// `sequence * n_heads + head`.
    pub fn attention_maps(&self, batch: &TokenBatch) -> Result<Vec<Vec<Array2<f64>>>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false)?;
        let mut trace = Vec::new();
        self.forward_traced(&mut g, &p, batch, &mut trace)?;
        Ok(trace.iter().map(|&v| g.attention_weights(v).expect("attention node").to_vec()).collect())
    }

    /// Output of the first decoder block alone, for inspection and tests.
    pub fn first_block(&self, batch: &TokenBatch, z: &Array2<f64>) -> Result<Array2<f64>> {
        let b = self.layout.blocks.first().ok_or_else(|| Error::config("network has no decoder blocks"))?;
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false)?;
        let zv = g.constant(z.clone())?;
        let y = self.decoder_block(&mut g, &p, b, zv, batch, &mut Vec::new())?;
        Ok(g.value(y).clone())
    }
}

impl FieldModel for HtfModel {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, g: &mut Graph, p: &[Var], batch: &TokenBatch) -> Result<Var> {
        let y = self.forward_traced(g, p, batch, &mut Vec::new())?;
        if g.value(y).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output".into()));
        }
        Ok(y)
    }
}
