use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::DimensionlessProblem;

const NODE_TOL: f64 = 1e-9;

/// Temperatures on a rectangular `(x̄, t̄)` grid, stored level-major:
/// `values[[level, node]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    x: Vec<f64>,
    t: Vec<f64>,
    values: Array2<f64>,
    problem: Option<DimensionlessProblem>,
}

impl FieldGrid {
    pub fn new(x: Vec<f64>, t: Vec<f64>, values: Array2<f64>, problem: Option<DimensionlessProblem>) -> Result<Self> {
        if values.dim() != (t.len(), x.len()) {
            return Err(Error::ShapeMismatch { op: "field grid", left: values.dim(), right: (t.len(), x.len()) });
        }
        if x.is_empty() || t.is_empty() {
            return Err(Error::invalid("field grid needs at least one node and one level"));
        }
        if !x.windows(2).all(|w| w[1] > w[0]) || !t.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::invalid("grid coordinates must be strictly increasing"));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            let (l, n) = (bad / x.len(), bad % x.len());
            return Err(Error::NonFinite(format!("field value at x = {}, t = {}", x[n], t[l])));
        }
        Ok(Self { x, t, values, problem })
    }

    /// Tabulates `f` on the tensor grid `x × t`.
    pub fn from_fn(x: Vec<f64>, t: Vec<f64>, problem: Option<DimensionlessProblem>, mut f: impl FnMut(f64, f64) -> f64) -> Result<Self> {
        let values = Array2::from_shape_fn((t.len(), x.len()), |(l, n)| f(x[n], t[l]));
        Self::new(x, t, values, problem)
    }

    /// Evenly spaced coordinates `lo, lo + step, …, hi` (inclusive).
    pub fn axis(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
        if !(step > 0.0) || hi < lo {
            return Err(Error::invalid(format!("axis [{lo}, {hi}] with step {step}")));
        }
        let n = ((hi - lo) / step).round() as usize;
        if ((lo + n as f64 * step) - hi).abs() > NODE_TOL * hi.abs().max(1.0) {
            return Err(Error::invalid(format!("step {step} does not divide [{lo}, {hi}]")));
        }
        // Rounded to 12 decimals so that 0.1-type steps give the same
        // coordinates as their decimal text.
        Ok((0..=n).map(|i| ((lo + i as f64 * step) * 1e12).round() / 1e12).collect())
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn problem(&self) -> Option<&DimensionlessProblem> {
        self.problem.as_ref()
    }

    /// Values at one time level.
    pub fn level(&self, l: usize) -> ndarray::ArrayView1<'_, f64> {
        self.values.row(l)
    }

    /// Index of the stored level at `t`, if any.
    pub fn level_index(&self, t: f64) -> Option<usize> {
        let i = self.t.partition_point(|&s| s < t - NODE_TOL);
        (i < self.t.len() && (self.t[i] - t).abs() <= NODE_TOL).then_some(i)
    }

    pub fn node_index(&self, x: f64) -> Option<usize> {
        let i = self.x.partition_point(|&s| s < x - NODE_TOL);
        (i < self.x.len() && (self.x[i] - x).abs() <= NODE_TOL).then_some(i)
    }

    /// Linear interpolation in `x̄` at a stored level.
    pub fn interpolate_x(&self, level: usize, x: f64) -> Result<f64> {
        let (lo, hi) = (self.x[0], self.x[self.x.len() - 1]);
        if !(x >= lo - NODE_TOL && x <= hi + NODE_TOL) {
            return Err(Error::invalid(format!("position {x} outside grid [{lo}, {hi}]")));
        }
        if let Some(n) = self.node_index(x) {
            return Ok(self.values[[level, n]]);
        }
        let i = self.x.partition_point(|&s| s <= x).clamp(1, self.x.len() - 1);
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let w = (x - x0) / (x1 - x0);
        Ok((1.0 - w) * self.values[[level, i - 1]] + w * self.values[[level, i]])
    }

    /// Bilinear interpolation; exact at nodes and stored levels.
    pub fn value_at(&self, x: f64, t: f64) -> Result<f64> {
        if let Some(l) = self.level_index(t) {
            return self.interpolate_x(l, x);
        }
        let (lo, hi) = (self.t[0], self.t[self.t.len() - 1]);
        if !(t > lo && t < hi) {
            return Err(Error::invalid(format!("time {t} outside grid [{lo}, {hi}]")));
        }
        let i = self.t.partition_point(|&s| s <= t);
        let w = (t - self.t[i - 1]) / (self.t[i] - self.t[i - 1]);
        Ok((1.0 - w) * self.interpolate_x(i - 1, x)? + w * self.interpolate_x(i, x)?)
    }

    /// Resamples onto another tensor grid.
    pub fn resample(&self, x: Vec<f64>, t: Vec<f64>) -> Result<Self> {
        let mut values = Array2::zeros((t.len(), x.len()));
        for (l, &tl) in t.iter().enumerate() {
            for (n, &xn) in x.iter().enumerate() {
                values[[l, n]] = self.value_at(xn, tl)?;
            }
        }
        Self::new(x, t, values, self.problem.clone())
    }

    /// Elementwise `self − other` on an identical grid.
    pub fn difference(&self, other: &FieldGrid) -> Result<Self> {
        if self.x != other.x || self.t != other.t {
            return Err(Error::invalid("grids differ"));
        }
        Self::new(self.x.clone(), self.t.clone(), &self.values - &other.values, None)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Columns `x,t,u`, time-major.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,t,u\n");
        for (l, &t) in self.t.iter().enumerate() {
            for (n, &x) in self.x.iter().enumerate() {
                let _ = writeln!(s, "{x:.8e},{t:.8e},{:.8e}", self.values[[l, n]]);
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}
