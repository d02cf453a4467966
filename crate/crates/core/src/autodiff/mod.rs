//! Reverse-mode differentiation over dense 2-D arrays.
//!
//! A [`Graph`] records every operation eagerly as it is evaluated. Calling
//! [`Graph::backward`] on a scalar replays the record in reverse and
//! accumulates exact gradients on every trainable leaf. Only parameter
//! gradients are produced; derivatives with respect to input coordinates are
//! taken with finite-difference stencils (see [`SparseMatrix`]).
//!
//! A graph is single-threaded. Independent graphs can live on different
//! threads.

mod sparse;

pub use sparse::SparseMatrix;

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Exp(usize),
    Sin(usize),
    Cos(usize),
    Abs(usize),
    Tanh(usize),
    Erfc(usize),
    Relu(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    SoftmaxRows(usize),
    AddBias(usize, usize),
    Transpose(usize),
    Slice { src: usize, rows: Range<usize>, cols: Range<usize> },
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Sparse(usize, Arc<SparseMatrix>),
    /// Caches `e^{-λ|z|}·cos(ω|z|)` and `e^{-λ|z|}·sin(ω|z|)`.
    LaplaceAct { z: usize, w1: usize, w2: usize, lam_raw: usize, omega: usize, cache: Box<[Array2<f64>; 2]> },
    Attention(Box<AttentionRecord>),
}

#[derive(Clone, Debug)]
struct AttentionRecord {
    q: usize,
    k: usize,
    v: usize,
    segments: Arc<Vec<usize>>,
    heads: usize,
    scale: f64,
    /// Row-stochastic weights, indexed `segment * heads + head`.
    probs: Vec<Array2<f64>>,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Exp(_) => "exp",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Abs(_) => "abs",
            Op::Tanh(_) => "tanh",
            Op::Erfc(_) => "erfc",
            Op::Relu(_) => "relu",
            Op::Pow(..) => "pow",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::AddBias(..) => "add_bias",
            Op::Transpose(_) => "transpose",
            Op::Slice { .. } => "slice",
            Op::ConcatRows(_) => "concat_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::Sparse(..) => "sparse",
            Op::LaplaceAct { .. } => "laplace_act",
            Op::Attention(_) => "attention",
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    /// True when some trainable leaf is reachable through this node.
    needs_grad: bool,
    trainable: bool,
    grad: Option<Array2<f64>>,
}

/// Recording context for one forward evaluation (or a sequence of them).
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    a.dim()
}

fn check_finite(what: &str, a: &Array2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} input of shape {:?}", a.dim())))
    }
}

/// Result shape of an elementwise binary op: equal shapes, or one side 1x1.
fn broadcast(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    if a == b || b == (1, 1) {
        Ok(a)
    } else if a == (1, 1) {
        Ok(b)
    } else {
        Err(Error::ShapeMismatch { op, left: a, right: b })
    }
}

/// Reduces a gradient to the shape of the operand it flows into.
fn reduce_to(g: Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    if g.dim() == target {
        g
    } else {
        Array2::from_elem((1, 1), g.sum())
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], p: usize, g: Array2<f64>) {
    match &mut adj[p] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::ForeignValue);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Array2<f64>, op: Op, trainable: bool) -> Var {
        let needs_grad = trainable || self.op_parents(&op).any(|p| self.nodes[p].needs_grad);
        self.nodes.push(Node { value, op, needs_grad, trainable, grad: None });
        Var { graph: self.id, index: self.nodes.len() - 1 }
    }

    fn op_parents<'a>(&'a self, op: &'a Op) -> Box<dyn Iterator<Item = usize> + 'a> {
        match op {
            Op::Leaf => Box::new(std::iter::empty()),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::MatMul(a, b)
            | Op::AddBias(a, b) => Box::new([*a, *b].into_iter()),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Abs(a)
            | Op::Tanh(a)
            | Op::Erfc(a)
            | Op::Relu(a)
            | Op::Pow(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxRows(a)
            | Op::Transpose(a)
            | Op::Sparse(a, _) => Box::new(std::iter::once(*a)),
            Op::Slice { src, .. } => Box::new(std::iter::once(*src)),
            Op::ConcatRows(v) | Op::ConcatCols(v) => Box::new(v.iter().copied()),
            Op::LaplaceAct { z, w1, w2, lam_raw, omega, .. } => {
                Box::new([*z, *w1, *w2, *lam_raw, *omega].into_iter())
            }
            Op::Attention(r) => Box::new([r.q, r.k, r.v].into_iter()),
        }
    }

    // ---- leaves -------------------------------------------------------

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var> {
        check_finite("param", &value)?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Array2::from_elem((1, 1), v))
    }

    pub fn scalar_param(&mut self, v: f64) -> Result<Var> {
        self.param(Array2::from_elem((1, 1), v))
    }

    // ---- accessors ----------------------------------------------------

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let i = self.idx(v).expect("Var used with a foreign graph");
        &self.nodes[i].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn is_trainable(&self, v: Var) -> bool {
        self.idx(v).map(|i| self.nodes[i].trainable).unwrap_or(false)
    }

    /// Accumulated gradient of a leaf. Non-trainable leaves and leaves that
    /// never received a gradient report zeros.
    pub fn grad(&self, v: Var) -> Array2<f64> {
        let node = &self.nodes[self.idx(v).expect("Var used with a foreign graph")];
        match &node.grad {
            Some(g) => g.clone(),
            None => Array2::zeros(node.value.dim()),
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- elementwise binary --------------------------------------------

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<(usize, usize)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        broadcast(name, shape(&self.nodes[ia].value), shape(&self.nodes[ib].value))?;
        Ok((ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary(a, b, "add")?;
        let v = &self.nodes[ia].value + &self.nodes[ib].value;
        Ok(self.push(v, Op::Add(ia, ib), false))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary(a, b, "sub")?;
        let v = &self.nodes[ia].value - &self.nodes[ib].value;
        Ok(self.push(v, Op::Sub(ia, ib), false))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary(a, b, "mul")?;
        let v = &self.nodes[ia].value * &self.nodes[ib].value;
        Ok(self.push(v, Op::Mul(ia, ib), false))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = self.binary(a, b, "div")?;
        let v = &self.nodes[ia].value / &self.nodes[ib].value;
        Ok(self.push(v, Op::Div(ia, ib), false))
    }

    // ---- unary ----------------------------------------------------------

    fn unary(&mut self, a: Var, op: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.mapv(f);
        Ok(self.push(v, op(ia), false))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg, |x| -x)
    }

    /// Multiplication by a constant that is not recorded as a leaf.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |i| Op::Scale(i, c), |x| c * x)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin, f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos, f64::cos)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs, f64::abs)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn erfc(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Erfc, libm::erfc)
    }

    /// `max(a, 0)` elementwise.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, |i| Op::Pow(i, p), |x| x.powf(p))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = Array2::from_elem((1, 1), self.nodes[ia].value.sum());
        Ok(self.push(v, Op::Sum(ia), false))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let n = self.nodes[ia].value.len();
        if n == 0 {
            return Err(Error::invalid("mean of an empty array"));
        }
        let v = Array2::from_elem((1, 1), self.nodes[ia].value.sum() / n as f64);
        Ok(self.push(v, Op::Mean(ia), false))
    }

    /// Mean of squared entries, the building block of every loss term.
    pub fn mean_square(&mut self, a: Var) -> Result<Var> {
        let sq = self.square(a)?;
        self.mean(sq)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let mut v = self.nodes[ia].value.clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        Ok(self.push(v, Op::SoftmaxRows(ia), false))
    }

    // ---- structural -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (shape(&self.nodes[ia].value), shape(&self.nodes[ib].value));
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch { op: "matmul", left: sa, right: sb });
        }
        let v = self.nodes[ia].value.dot(&self.nodes[ib].value);
        Ok(self.push(v, Op::MatMul(ia, ib), false))
    }

    /// Adds a `1 x n` row vector to every row of an `m x n` array.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let (sa, sb) = (shape(&self.nodes[ia].value), shape(&self.nodes[ib].value));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(Error::ShapeMismatch { op: "add_bias", left: sa, right: sb });
        }
        let v = &self.nodes[ia].value + &self.nodes[ib].value;
        Ok(self.push(v, Op::AddBias(ia, ib), false))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.nodes[ia].value.t().to_owned();
        Ok(self.push(v, Op::Transpose(ia), false))
    }

    pub fn slice(&mut self, a: Var, rows: Range<usize>, cols: Range<usize>) -> Result<Var> {
        let ia = self.idx(a)?;
        let sa = shape(&self.nodes[ia].value);
        if rows.start > rows.end || rows.end > sa.0 || cols.start > cols.end || cols.end > sa.1 {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: sa,
                right: (rows.end, cols.end),
            });
        }
        let v = self.nodes[ia].value.slice(s![rows.clone(), cols.clone()]).to_owned();
        Ok(self.push(v, Op::Slice { src: ia, rows, cols }, false))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis(0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis(1))
    }

    fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concatenation of zero arrays"));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = shape(&self.nodes[idx[0]].value);
        let other = Axis(1 - axis.0);
        for &i in &idx[1..] {
            let si = shape(&self.nodes[i].value);
            let (fa, sa) = if other.0 == 0 { (first.0, si.0) } else { (first.1, si.1) };
            if fa != sa {
                return Err(Error::ShapeMismatch { op: "concat", left: first, right: si });
            }
        }
        let views: Vec<_> = idx.iter().map(|&i| self.nodes[i].value.view()).collect();
        let v = ndarray::concatenate(axis, &views).expect("shapes validated");
        let op = if axis.0 == 0 { Op::ConcatRows(idx) } else { Op::ConcatCols(idx) };
        Ok(self.push(v, op, false))
    }

    /// Applies a constant sparse linear map: `S · a`.
    pub fn sparse(&mut self, a: Var, map: Arc<SparseMatrix>) -> Result<Var> {
        let ia = self.idx(a)?;
        let sa = shape(&self.nodes[ia].value);
        if map.ncols() != sa.0 {
            return Err(Error::ShapeMismatch {
                op: "sparse",
                left: (map.nrows(), map.ncols()),
                right: sa,
            });
        }
        let v = map.apply(&self.nodes[ia].value);
        Ok(self.push(v, Op::Sparse(ia, map), false))
    }

    /// Fused decaying-oscillation activation
    /// `w1·e^{-λ|z|}·cos(ω|z|) + w2·e^{-λ|z|}·sin(ω|z|)` with
    /// `λ = ln(1 + e^{lam_raw})`. All four parameters are `1 x 1`.
    pub fn laplace_act(&mut self, z: Var, w1: Var, w2: Var, lam_raw: Var, omega: Var) -> Result<Var> {
        let iz = self.idx(z)?;
        let ps = [self.idx(w1)?, self.idx(w2)?, self.idx(lam_raw)?, self.idx(omega)?];
        for &p in &ps {
            let sp = shape(&self.nodes[p].value);
            if sp != (1, 1) {
                return Err(Error::ShapeMismatch { op: "laplace_act", left: (1, 1), right: sp });
            }
        }
        let [a, b, l, o] = ps.map(|p| self.nodes[p].value[[0, 0]]);
        let lam = softplus(l);
        let zv = &self.nodes[iz].value;
        let n = zv.len();
        let (mut ec, mut es, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for &x in zv.iter() {
            let t = x.abs();
            let (s, c) = (o * t).sin_cos();
            let e = (-lam * t).exp();
            ec.push(e * c);
            es.push(e * s);
            v.push(a * e * c + b * e * s);
        }
        let shaped = |d: Vec<f64>| Array2::from_shape_vec(zv.dim(), d).expect("length matches shape");
        let (ec, es, v) = (shaped(ec), shaped(es), shaped(v));
        let [iw1, iw2, il, io] = ps;
        let op = Op::LaplaceAct { z: iz, w1: iw1, w2: iw2, lam_raw: il, omega: io, cache: Box::new([ec, es]) };
        Ok(self.push(v, op, false))
    }

    /// Multi-head scaled dot-product self-attention without a mask, applied
    /// independently to consecutive row segments (one segment per sequence).
    ///
    /// `q`, `k`, `v` are `n x d` with `d` divisible by `heads`; head `h` uses
    /// columns `h·d/heads .. (h+1)·d/heads`. `segments` lists sequence
    /// lengths summing to `n`. Scores are scaled by `1/sqrt(d/heads)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segments: Arc<Vec<usize>>, heads: usize) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let sq = shape(&self.nodes[iq].value);
        for i in [ik, iv] {
            let si = shape(&self.nodes[i].value);
            if si != sq {
                return Err(Error::ShapeMismatch { op: "attention", left: sq, right: si });
            }
        }
        if heads == 0 || sq.1 % heads != 0 {
            return Err(Error::invalid(format!("attention width {} not divisible by {heads} heads", sq.1)));
        }
        let total: usize = segments.iter().sum();
        if total != sq.0 || segments.iter().any(|&l| l == 0) {
            return Err(Error::invalid(format!(
                "attention segments cover {total} rows (with no empty segment required), input has {}",
                sq.0
            )));
        }
        let dh = sq.1 / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let probs = attention_probabilities(&self.nodes[iq].value, &self.nodes[ik].value, &segments, heads)?;
        let vv = &self.nodes[iv].value;
        let mut out = Array2::zeros(sq);
        let mut r0 = 0;
        for (si, &len) in segments.iter().enumerate() {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &probs[si * heads + h];
                let o = p.dot(&vv.slice(s![r0..r0 + len, cols.clone()]));
                out.slice_mut(s![r0..r0 + len, cols]).assign(&o);
            }
            r0 += len;
        }
        let rec = AttentionRecord { q: iq, k: ik, v: iv, segments, heads, scale, probs };
        Ok(self.push(out, Op::Attention(Box::new(rec)), false))
    }

    /// Attention weights recorded by an [`Graph::attention`] node, indexed
    /// `segment * heads + head`.
    pub fn attention_weights(&self, v: Var) -> Option<&[Array2<f64>]> {
        match &self.nodes[self.idx(v).ok()?].op {
            Op::Attention(r) => Some(&r.probs),
            _ => None,
        }
    }

    // ---- backward -------------------------------------------------------

    /// Accumulates d(loss)/d(leaf) into every trainable leaf reachable from
    /// `loss`. Repeated calls add to existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        let sl = shape(&self.nodes[il].value);
        if sl != (1, 1) {
            return Err(Error::NotScalar(sl));
        }
        if !self.nodes[il].needs_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; il + 1];
        adj[il] = Some(Array2::ones((1, 1)));
        for i in (0..=il).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if self.nodes[i].trainable {
                    match &mut self.nodes[i].grad {
                        Some(acc) => *acc += &g,
                        slot @ None => *slot = Some(g),
                    }
                }
                continue;
            }
            self.backprop_node(i, g, &mut adj);
        }
        Ok(())
    }

    fn wants(&self, p: usize) -> bool {
        self.nodes[p].needs_grad
    }

    fn backprop_node(&self, i: usize, g: Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let val = |p: usize| &self.nodes[p].value;
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                if self.wants(*b) {
                    accumulate(adj, *b, reduce_to(g.clone(), val(*b).dim()));
                }
                if self.wants(*a) {
                    accumulate(adj, *a, reduce_to(g, val(*a).dim()));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    accumulate(adj, *b, reduce_to(-&g, val(*b).dim()));
                }
                if self.wants(*a) {
                    accumulate(adj, *a, reduce_to(g, val(*a).dim()));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, reduce_to(&g * val(*b), val(*a).dim()));
                }
                if self.wants(*b) {
                    accumulate(adj, *b, reduce_to(&g * val(*a), val(*b).dim()));
                }
            }
            Op::Div(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, reduce_to(&g / val(*b), val(*a).dim()));
                }
                if self.wants(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let gb = -(&g * y) / val(*b);
                    accumulate(adj, *b, reduce_to(gb, val(*b).dim()));
                }
            }
            Op::Neg(a) => accumulate(adj, *a, -g),
            Op::Scale(a, c) => accumulate(adj, *a, g * *c),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(adj, *a, g.dot(&val(*b).t()));
                }
                if self.wants(*b) {
                    accumulate(adj, *b, val(*a).t().dot(&g));
                }
            }
            Op::Exp(a) => accumulate(adj, *a, g * y),
            Op::Sin(a) => accumulate(adj, *a, g * &val(*a).mapv(f64::cos)),
            Op::Cos(a) => accumulate(adj, *a, g * &val(*a).mapv(|x| -x.sin())),
            Op::Abs(a) => accumulate(adj, *a, g * &val(*a).mapv(sign)),
            Op::Tanh(a) => accumulate(adj, *a, g * &y.mapv(|t| 1.0 - t * t)),
            Op::Erfc(a) => {
                let k = -2.0 / std::f64::consts::PI.sqrt();
                accumulate(adj, *a, g * &val(*a).mapv(|x| k * (-x * x).exp()))
            }
            Op::Relu(a) => {
                accumulate(adj, *a, g * &val(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 }))
            }
            Op::Pow(a, p) => {
                let p = *p;
                accumulate(adj, *a, g * &val(*a).mapv(|x| p * x.powf(p - 1.0)))
            }
            Op::Sum(a) => accumulate(adj, *a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                accumulate(adj, *a, Array2::from_elem(val(*a).dim(), g[[0, 0]] / n))
            }
            Op::SoftmaxRows(a) => {
                let gy = &g * y;
                let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                accumulate(adj, *a, gy - &(y * &dots));
            }
            Op::AddBias(a, b) => {
                if self.wants(*b) {
                    accumulate(adj, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.wants(*a) {
                    accumulate(adj, *a, g);
                }
            }
            Op::Transpose(a) => accumulate(adj, *a, g.t().to_owned()),
            Op::Slice { src, rows, cols } => {
                let slot = adj[*src].get_or_insert_with(|| Array2::zeros(val(*src).dim()));
                let mut view = slot.slice_mut(s![rows.clone(), cols.clone()]);
                view += &g;
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let n = val(p).nrows();
                    if self.wants(p) {
                        accumulate(adj, p, g.slice(s![r0..r0 + n, ..]).to_owned());
                    }
                    r0 += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let n = val(p).ncols();
                    if self.wants(p) {
                        accumulate(adj, p, g.slice(s![.., c0..c0 + n]).to_owned());
                    }
                    c0 += n;
                }
            }
            Op::Sparse(a, map) => {
                let slot = adj[*a].get_or_insert_with(|| Array2::zeros(val(*a).dim()));
                map.apply_transpose_into(&g, slot);
            }
            Op::LaplaceAct { z, w1, w2, lam_raw, omega, cache } => {
                let (a, b, l, o) =
                    (val(*w1)[[0, 0]], val(*w2)[[0, 0]], val(*lam_raw)[[0, 0]], val(*omega)[[0, 0]]);
                let lam = softplus(l);
                let dlam = sigmoid(l);
                let zv = val(*z);
                let (mut ga, mut gb, mut gl, mut go) = (0.0, 0.0, 0.0, 0.0);
                let [ecs, ess] = &**cache;
                let mut gz = Vec::with_capacity(zv.len());
                for (((&x, &gi), &ec), &es) in zv.iter().zip(g.iter()).zip(ecs.iter()).zip(ess.iter()) {
                    let t = x.abs();
                    let yv = a * ec + b * es;
                    // dy/dt for t = |z|
                    let dydt = -lam * yv + o * (b * ec - a * es);
                    gz.push(gi * dydt * sign(x));
                    ga += gi * ec;
                    gb += gi * es;
                    gl += gi * (-t * yv) * dlam;
                    go += gi * t * (b * ec - a * es);
                }
                if self.wants(*z) {
                    accumulate(adj, *z, Array2::from_shape_vec(zv.dim(), gz).expect("length matches shape"));
                }
                for (p, v) in [(*w1, ga), (*w2, gb), (*lam_raw, gl), (*omega, go)] {
                    if self.wants(p) {
                        accumulate(adj, p, Array2::from_elem((1, 1), v));
                    }
                }
            }
            Op::Attention(r) => {
                let (qv, kv, vv) = (val(r.q), val(r.k), val(r.v));
                let dh = qv.ncols() / r.heads;
                let mut gq = Array2::zeros(qv.dim());
                let mut gk = Array2::zeros(kv.dim());
                let mut gv = Array2::zeros(vv.dim());
                let mut r0 = 0;
                for (si, &len) in r.segments.iter().enumerate() {
                    let rows = r0..r0 + len;
                    for h in 0..r.heads {
                        let cols = h * dh..(h + 1) * dh;
                        let p = &r.probs[si * r.heads + h];
                        let go = g.slice(s![rows.clone(), cols.clone()]);
                        let vs = vv.slice(s![rows.clone(), cols.clone()]);
                        gv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&go));
                        let dp = go.dot(&vs.t());
                        let dots = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                        let ds = (p * &(dp - &dots)) * r.scale;
                        let qs = qv.slice(s![rows.clone(), cols.clone()]);
                        let ks = kv.slice(s![rows.clone(), cols.clone()]);
                        gq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                        gk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qs));
                    }
                    r0 += len;
                }
                for (p, gp) in [(r.q, gq), (r.k, gk), (r.v, gv)] {
                    if self.wants(p) {
                        accumulate(adj, p, gp);
                    }
                }
            }
        }
    }

    /// Name of the operation that produced `v` (diagnostics).
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[self.idx(v).expect("foreign Var")].op.name()
    }
}

/// Row-stochastic attention weights for every segment and head, indexed
/// `segment * heads + head`. See [`Graph::attention`].
pub fn attention_probabilities(
    q: &Array2<f64>,
    k: &Array2<f64>,
    segments: &[usize],
    heads: usize,
) -> Result<Vec<Array2<f64>>> {
    if q.dim() != k.dim() {
        return Err(Error::ShapeMismatch { op: "attention", left: q.dim(), right: k.dim() });
    }
    if heads == 0 || q.ncols() % heads != 0 {
        return Err(Error::invalid(format!("attention width {} not divisible by {heads} heads", q.ncols())));
    }
    let dh = q.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Vec::with_capacity(segments.len() * heads);
    let mut r0 = 0;
    for &len in segments {
        if r0 + len > q.nrows() {
            return Err(Error::invalid("attention segments exceed the number of rows"));
        }
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            if len == 1 {
                out.push(Array2::ones((1, 1)));
                continue;
            }
            let qs = q.slice(s![r0..r0 + len, cols.clone()]);
            let ks = k.slice(s![r0..r0 + len, cols]);
            let mut p = qs.dot(&ks.t()) * scale;
            for mut row in p.rows_mut() {
                let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                row.mapv_inplace(|x| (x - m).exp());
                let z = row.sum();
                row.mapv_inplace(|x| x / z);
            }
            out.push(p);
        }
        r0 += len;
    }
    Ok(out)
}

/// Position of a single scalar inside a list of parameter arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Probe {
    pub param: usize,
    pub row: usize,
    pub col: usize,
}

/// Every scalar of every parameter array.
pub fn all_probes(params: &[Array2<f64>]) -> Vec<Probe> {
    let mut out = Vec::new();
    for (p, a) in params.iter().enumerate() {
        for ((row, col), _) in a.indexed_iter() {
            out.push(Probe { param: p, row, col });
        }
    }
    out
}

/// `n` scalars drawn uniformly over all parameter entries.
pub fn random_probes(params: &[Array2<f64>], n: usize, seed: u64) -> Vec<Probe> {
    let sizes: Vec<usize> = params.iter().map(|a| a.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut k = rng.gen_range(0..total);
            let mut p = 0;
            while k >= sizes[p] {
                k -= sizes[p];
                p += 1;
            }
            let ncols = params[p].ncols();
            Probe { param: p, row: k / ncols, col: k % ncols }
        })
        .collect()
}

fn eval_scalar<F>(f: &F, params: &[Array2<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect::<Result<_>>()?;
    let y = f(&mut g, &vars)?;
    let v = g.scalar_value(y);
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient-check function value".into()));
    }
    Ok(v)
}

/// Compares reverse-mode gradients with central differences at every
/// parameter entry. Returns the maximum of
/// `|ad - fd| / (|fd| + 1e-12)`.
pub fn gradient_check<F>(f: F, params: &[Array2<f64>], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let probes = all_probes(params);
    gradient_check_probes(f, params, step, &probes)
}

/// [`gradient_check`] restricted to the listed entries.
pub fn gradient_check_probes<F>(f: F, params: &[Array2<f64>], step: f64, probes: &[Probe]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect::<Result<_>>()?;
    let y = f(&mut g, &vars)?;
    if !g.scalar_value(y).is_finite() {
        return Err(Error::NonFinite("gradient-check function value".into()));
    }
    g.backward(y)?;
    let grads: Vec<Array2<f64>> = vars.iter().map(|&v| g.grad(v)).collect();

    let mut worst: f64 = 0.0;
    let mut work: Vec<Array2<f64>> = params.to_vec();
    for pr in probes {
        let orig = work[pr.param][[pr.row, pr.col]];
        work[pr.param][[pr.row, pr.col]] = orig + step;
        let fp = eval_scalar(&f, &work)?;
        work[pr.param][[pr.row, pr.col]] = orig - step;
        let fm = eval_scalar(&f, &work)?;
        work[pr.param][[pr.row, pr.col]] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let ad = grads[pr.param][[pr.row, pr.col]];
        worst = worst.max((ad - fd).abs() / (fd.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
