//! Per-instance token batches with the linear read-outs every loss term
//! needs, built once and reused across epochs.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::problem::{DimensionlessProblem, INTERFACE};
use super::stencil::{one_sided_slope, pde_rows, push_pde_rows};
use crate::autodiff::SparseMatrix;
use crate::error::{Error, Result};
use crate::model::TokenBatch;
use crate::sampling::{Anchor, Point, Region, SequenceBatch};

/// Counts of boundary, initial and interface points per instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxConfig {
    pub bc_points: usize,
    pub ic_points: usize,
    pub interface_points: usize,
    /// Spacing of the one-sided derivative stencils.
    pub dx: f64,
}

impl Default for AuxConfig {
    fn default() -> Self {
        Self { bc_points: 100, ic_points: 200, interface_points: 100, dx: 1e-3 }
    }
}

/// Residual `map·ū − target`.
#[derive(Clone, Debug)]
pub struct ValueTerm {
    pub map: Arc<SparseMatrix>,
    pub target: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct PdeTerm {
    pub dt: Arc<SparseMatrix>,
    pub dxx: Arc<SparseMatrix>,
}

/// Interface temperature and one-sided slope, one row per interface time.
#[derive(Clone, Debug)]
pub struct InterfaceTerm {
    pub value: Arc<SparseMatrix>,
    pub slope: Arc<SparseMatrix>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct InstancePlan {
    pub region: Region,
    pub batch: TokenBatch,
    pub pde: Option<PdeTerm>,
    /// Left boundary for the layer, far boundary for the substrate.
    pub bc: Option<ValueTerm>,
    pub ic: Option<ValueTerm>,
    pub interface: Option<InterfaceTerm>,
    pub sensors: Option<ValueTerm>,
}

/// Collocation input for the PDE term.
pub enum PdeSource<'a> {
    Sequences(Vec<&'a SequenceBatch>),
    /// Independent points with the time step of their stencil; each
    /// residual reads six single-token sequences.
    Points(Vec<Point>, f64),
    None,
}

/// Which terms a plan should carry.
pub struct PlanRequest<'a> {
    pub pde: PdeSource<'a>,
    pub bc: bool,
    pub ic: bool,
    pub interface: bool,
    /// `(x̄, t̄, ū)` measurements; substrate only.
    pub sensors: Option<&'a [(f64, f64, f64)]>,
}

#[derive(Default)]
struct Builder {
    tokens: Vec<(f64, f64)>,
    segments: Vec<usize>,
}

impl Builder {
    /// Appends tokens as one sequence (or as separate one-token sequences)
    /// and returns the offset of the first.
    fn push(&mut self, toks: &[(f64, f64)], split: bool) -> usize {
        let off = self.tokens.len();
        self.tokens.extend_from_slice(toks);
        if split {
            self.segments.extend(std::iter::repeat(1).take(toks.len()));
        } else {
            self.segments.push(toks.len());
        }
        off
    }
}

fn rows_to_map(n: usize, rows: &[Vec<(usize, f64)>]) -> Arc<SparseMatrix> {
    let mut m = SparseMatrix::new(n);
    for r in rows {
        m.push_row(r);
    }
    Arc::new(m)
}

/// Cell-centered times `(j + 1/2)·t_max/n`; never hits `t̄ = 0`.
pub fn aux_times(n: usize, t_max: f64) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) * t_max / n as f64).collect()
}

/// Initial-condition abscissae: cell centers of the region, so the
/// interface itself is never sampled.
pub fn ic_points(problem: &DimensionlessProblem, region: Region, n: usize) -> Vec<f64> {
    let b = match region {
        Region::Layer => problem.layer_bounds(),
        Region::Substrate => problem.substrate_bounds(),
    };
    (0..n).map(|i| b.lo + (i as f64 + 0.5) * b.width() / n as f64).collect()
}

/// Builds the batch and read-outs for one instance.
pub fn build_plan(problem: &DimensionlessProblem, region: Region, aux: &AuxConfig, req: &PlanRequest) -> Result<InstancePlan> {
    problem.validate()?;
    let h = aux.dx;
    if !(h > 0.0) {
        return Err(Error::config("auxiliary stencil spacing must be positive"));
    }
    let mut b = Builder::default();

    // PDE collocation
    let mut pde_specs: Vec<(SequenceBatch, usize)> = Vec::new();
    match &req.pde {
        PdeSource::Sequences(seqs) => {
            for s in seqs {
                if s.anchor.region != region {
                    return Err(Error::invalid("sequence from the other region passed to a plan"));
                }
                let off = b.push(&s.tokens, false);
                pde_specs.push(((*s).clone(), off));
            }
        }
        PdeSource::Points(pts, dt) => {
            let dt = *dt;
            for p in pts {
                if p.region != region {
                    return Err(Error::invalid("point from the other region passed to a plan"));
                }
                let s = SequenceBatch {
                    tokens: vec![(p.x - h, p.t), (p.x, p.t), (p.x + h, p.t), (p.x - h, p.t + dt), (p.x, p.t + dt), (p.x + h, p.t + dt)],
                    anchor: Anchor { x: p.x, t: p.t, region },
                    k: 3,
                    t: 2,
                    dx: h,
                    dt,
                };
                let off = b.push(&s.tokens, true);
                pde_specs.push((s, off));
            }
        }
        PdeSource::None => {}
    }

    // boundary
    let mut bc_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut bc_target = Vec::new();
    if req.bc {
        for t in aux_times(aux.bc_points, problem.t_max) {
            match region {
                Region::Layer => match problem.left_bc.value(t) {
                    Some(v) => {
                        let o = b.push(&[(0.0, t)], false);
                        bc_rows.push(vec![(o, 1.0)]);
                        bc_target.push(v);
                    }
                    None => {
                        let o = b.push(&[(0.0, t), (h, t), (2.0 * h, t)], false);
                        bc_rows.push(one_sided_slope([o, o + 1, o + 2], h, 1.0).to_vec());
                        bc_target.push(0.0);
                    }
                },
                Region::Substrate => {
                    let o = b.push(&[(problem.x_max, t)], false);
                    bc_rows.push(vec![(o, 1.0)]);
                    bc_target.push(problem.far_value);
                }
            }
        }
    }

    // initial condition
    let mut ic_rows = Vec::new();
    let mut ic_target = Vec::new();
    if req.ic {
        let v = match region {
            Region::Layer => problem.ic_layer,
            Region::Substrate => problem.ic_substrate,
        };
        for x in ic_points(problem, region, aux.ic_points) {
            let o = b.push(&[(x, 0.0)], false);
            ic_rows.push(vec![(o, 1.0)]);
            ic_target.push(v);
        }
    }

    // interface
    let mut if_val = Vec::new();
    let mut if_slope = Vec::new();
    let if_times = if req.interface { aux_times(aux.interface_points, problem.t_max) } else { Vec::new() };
    for &t in &if_times {
        let dir = if region == Region::Layer { -1.0 } else { 1.0 };
        let o = b.push(&[(INTERFACE, t), (INTERFACE + dir * h, t), (INTERFACE + 2.0 * dir * h, t)], false);
        if_val.push(vec![(o, 1.0)]);
        if_slope.push(one_sided_slope([o, o + 1, o + 2], h, dir).to_vec());
    }

    // sensors
    let mut s_rows = Vec::new();
    let mut s_target = Vec::new();
    if let Some(ms) = req.sensors {
        if region != Region::Substrate {
            return Err(Error::invalid("measurements belong to the substrate instance"));
        }
        for &(x, t, u) in ms {
            if !(x > INTERFACE && x <= problem.x_max) {
                return Err(Error::invalid(format!("measurement at x={x} lies outside the substrate region")));
            }
            let o = b.push(&[(x, t)], false);
            s_rows.push(vec![(o, 1.0)]);
            s_target.push(u);
        }
        if ms.is_empty() {
            return Err(Error::invalid("measurement set is empty"));
        }
    }

    let n = b.tokens.len();
    if n == 0 {
        return Err(Error::invalid("plan requests no tokens"));
    }
    let pde = if pde_specs.is_empty() {
        None
    } else {
        let mut dt = SparseMatrix::new(n);
        let mut dxx = SparseMatrix::new(n);
        for (s, off) in &pde_specs {
            push_pde_rows(&mut dt, &mut dxx, s, *off)?;
        }
        debug_assert_eq!(dt.nrows(), pde_specs.iter().map(|(s, _)| pde_rows(s)).sum::<usize>());
        Some(PdeTerm { dt: Arc::new(dt), dxx: Arc::new(dxx) })
    };
    let col = |v: Vec<f64>| Array2::from_shape_vec((v.len(), 1), v).expect("column");
    let value_term = |rows: &[Vec<(usize, f64)>], target: Vec<f64>| {
        (!rows.is_empty()).then(|| ValueTerm { map: rows_to_map(n, rows), target: col(target) })
    };
    let bc = value_term(&bc_rows, bc_target);
    let ic = value_term(&ic_rows, ic_target);
    let sensors = value_term(&s_rows, s_target);
    let interface = (!if_val.is_empty()).then(|| InterfaceTerm {
        value: rows_to_map(n, &if_val),
        slope: rows_to_map(n, &if_slope),
        times: if_times,
    });
    let coords = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { b.tokens[i].0 } else { b.tokens[i].1 });
    let batch = TokenBatch::new(coords, b.segments)?;
    Ok(InstancePlan { region, batch, pde, bc, ic, interface, sensors })
}
