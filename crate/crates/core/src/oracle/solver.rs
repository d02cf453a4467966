use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FieldGrid;
use crate::error::{Error, Result};
use crate::physics::{DimensionlessProblem, INTERFACE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    CrankNicolson,
    ImplicitEuler,
}

impl Scheme {
    fn theta(self) -> f64 {
        match self {
            Scheme::CrankNicolson => 0.5,
            Scheme::ImplicitEuler => 1.0,
        }
    }
}

/// Condition at the truncated end `x̄ = x̄_max`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarBoundary {
    /// `ū = far_value` from the problem.
    #[default]
    Dirichlet,
    /// Zero flux; used to verify conservation.
    Insulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dx: f64,
    pub dt: f64,
    pub scheme: Scheme,
    /// Implicit Euler steps taken before switching to Crank–Nicolson.
    /// Applied only when the initial data is discontinuous.
    #[serde(default = "default_startup")]
    pub startup_steps: usize,
    /// Store every n-th time level (the first and last are always kept).
    #[serde(default = "default_save_every")]
    pub save_every: usize,
    #[serde(default)]
    pub far: FarBoundary,
}

fn default_startup() -> usize {
    10
}

fn default_save_every() -> usize {
    50
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dx: 1e-3, dt: 1e-4, scheme: Scheme::CrankNicolson, startup_steps: 10, save_every: 50, far: FarBoundary::Dirichlet }
    }
}

impl SolverConfig {
    pub fn with_resolution(dx: f64, dt: f64) -> Self {
        Self { dx, dt, ..Self::default() }
    }
}

fn divisions(width: f64, h: f64, what: &str) -> Result<usize> {
    let n = (width / h).round();
    if n < 1.0 || (n * h - width).abs() > 1e-9 * width.max(1.0) {
        return Err(Error::invalid(format!("step {h} does not divide the {what} ({width})")));
    }
    Ok(n as usize)
}

/// Tridiagonal operator `u' = L u + f` for the semi-discrete system, one
/// row per node. Rows for Dirichlet nodes are left empty.
struct Operator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    forcing: Vec<f64>,
    left_dirichlet: bool,
    right_dirichlet: bool,
}

/// Node-centered finite volumes: interior rows are the standard 3-point
/// Laplacian; the interface and insulated ends use half-cell balances with
/// conductivities `κ̄` (layer) and 1 (substrate).
fn build_operator(p: &DimensionlessProblem, cfg: &SolverConfig, m: usize, n: usize) -> Operator {
    let h = cfg.dx;
    let h2 = h * h;
    let (k_l, k_s) = (p.kappa, 1.0);
    let (c_l, c_s) = (p.kappa / p.alpha, 1.0 / p.substrate_alpha);
    let w = p.source;
    let size = n + 1;
    let mut op = Operator {
        sub: vec![0.0; size],
        diag: vec![0.0; size],
        sup: vec![0.0; size],
        forcing: vec![0.0; size],
        left_dirichlet: p.left_bc.value(0.0).is_some(),
        right_dirichlet: cfg.far == FarBoundary::Dirichlet,
    };
    for i in 1..n {
        let (sub, diag, sup, f) = if i < m {
            let a = k_l / (c_l * h2);
            (a, -2.0 * a, a, w / c_l)
        } else if i > m {
            let a = k_s / (c_s * h2);
            (a, -2.0 * a, a, 0.0)
        } else {
            let cap = 0.5 * (c_l + c_s) * h;
            let (a, b) = (k_l / (h * cap), k_s / (h * cap));
            (a, -(a + b), b, 0.5 * w * h / cap)
        };
        op.sub[i] = sub;
        op.diag[i] = diag;
        op.sup[i] = sup;
        op.forcing[i] = f;
    }
    if !op.left_dirichlet {
        let a = 2.0 * k_l / (c_l * h2);
        op.diag[0] = -a;
        op.sup[0] = a;
        op.forcing[0] = w / c_l;
    }
    if !op.right_dirichlet {
        let a = 2.0 * k_s / (c_s * h2);
        op.diag[n] = -a;
        op.sub[n] = a;
    }
    op
}

/// Thomas algorithm; fails on a vanishing pivot.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], scratch: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let tiny = 1e-300;
    let mut d = diag[0];
    if d.abs() < tiny {
        return Err(Error::Solver("singular tridiagonal system at row 0".into()));
    }
    scratch[0] = sup[0] / d;
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - sub[i] * scratch[i - 1];
        if d.abs() < tiny || !d.is_finite() {
            return Err(Error::Solver(format!("singular tridiagonal system at row {i}")));
        }
        scratch[i] = sup[i] / d;
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
    Ok(())
}

/// Time-marches the coupled layer/substrate problem on a uniform grid with
/// a node at the interface.
pub fn solve_two_region(problem: &DimensionlessProblem, cfg: &SolverConfig) -> Result<FieldGrid> {
    problem.validate()?;
    if !(cfg.dx > 0.0 && cfg.dt > 0.0) || cfg.save_every == 0 {
        return Err(Error::invalid("solver steps must be positive"));
    }
    let m = divisions(INTERFACE, cfg.dx, "layer width")?;
    let n = m + divisions(problem.x_max - INTERFACE, cfg.dx, "substrate width")?;
    let steps = divisions(problem.t_max, cfg.dt, "time horizon")?;
    let x: Vec<f64> = (0..=n).map(|i| if i == m { INTERFACE } else { i as f64 * cfg.dx }).collect();

    let op = build_operator(problem, cfg, m, n);
    let size = n + 1;
    let mut u: Vec<f64> = x.iter().map(|&xi| problem.ic(xi)).collect();

    let mut levels = vec![0.0];
    let mut stored = vec![u.clone()];
    let (mut sub, mut diag, mut sup) = (vec![0.0; size], vec![0.0; size], vec![0.0; size]);
    let mut rhs = vec![0.0; size];
    let mut scratch = vec![0.0; size];
    let smooth_start = !problem.step_ic();
    for s in 1..=steps {
        let t_new = s as f64 * cfg.dt;
        let theta = if cfg.scheme == Scheme::CrankNicolson && (smooth_start || s > cfg.startup_steps) {
            0.5
        } else {
            Scheme::ImplicitEuler.theta()
        };
        let explicit = 1.0 - theta;
        for i in 0..size {
            let lu = op.diag[i] * u[i]
                + if i > 0 { op.sub[i] * u[i - 1] } else { 0.0 }
                + if i < n { op.sup[i] * u[i + 1] } else { 0.0 };
            rhs[i] = u[i] + cfg.dt * (explicit * lu + op.forcing[i]);
            sub[i] = -theta * cfg.dt * op.sub[i];
            diag[i] = 1.0 - theta * cfg.dt * op.diag[i];
            sup[i] = -theta * cfg.dt * op.sup[i];
        }
        if op.left_dirichlet {
            (sub[0], diag[0], sup[0]) = (0.0, 1.0, 0.0);
            rhs[0] = problem.left_bc.value(t_new).unwrap_or_default();
        }
        if op.right_dirichlet {
            (sub[n], diag[n], sup[n]) = (0.0, 1.0, 0.0);
            rhs[n] = problem.far_value;
        }
        thomas(&sub, &diag, &sup, &mut rhs, &mut scratch)?;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite temperature at t = {t_new}")));
        }
        std::mem::swap(&mut u, &mut rhs);
        if s % cfg.save_every == 0 || s == steps {
            levels.push(t_new);
            stored.push(u.clone());
        }
    }
    let values = Array2::from_shape_fn((levels.len(), size), |(l, i)| stored[l][i]);
    FieldGrid::new(x, levels, values, Some(problem.clone()))
}

/// Capacity-weighted heat content `Σ ρ̄c̄·ū·Δx̄` over the control volumes of
/// a solver grid at one stored level.
pub fn heat_content(grid: &FieldGrid, level: usize) -> Result<f64> {
    let p = grid.problem().ok_or_else(|| Error::invalid("grid has no generating problem"))?;
    let x = grid.x();
    let m = grid.node_index(INTERFACE).ok_or_else(|| Error::invalid("interface is not a grid node"))?;
    let (c_l, c_s) = (p.rho_c(), 1.0 / p.substrate_alpha);
    let u = grid.level(level);
    let n = x.len() - 1;
    let mut total = 0.0;
    for i in 0..=n {
        let left = if i > 0 { 0.5 * (x[i] - x[i - 1]) } else { 0.0 };
        let right = if i < n { 0.5 * (x[i + 1] - x[i]) } else { 0.0 };
        let (cl, cr) = if i < m {
            (c_l, c_l)
        } else if i > m {
            (c_s, c_s)
        } else {
            (c_l, c_s)
        };
        total += (cl * left + cr * right) * u[i];
    }
    Ok(total)
}

/// Discrete flux mismatch `|κ̄·ū_x(1⁻) − ū_x(1⁺)|` at one stored level,
/// from one-sided second-order differences.
pub fn interface_flux_jump(grid: &FieldGrid, level: usize) -> Result<f64> {
    let p = grid.problem().ok_or_else(|| Error::invalid("grid has no generating problem"))?;
    let m = grid.node_index(INTERFACE).ok_or_else(|| Error::invalid("interface is not a grid node"))?;
    if m < 2 || m + 2 >= grid.x().len() {
        return Err(Error::invalid("grid too coarse around the interface"));
    }
    let u = grid.level(level);
    let h = grid.x()[m] - grid.x()[m - 1];
    let left = (3.0 * u[m] - 4.0 * u[m - 1] + u[m - 2]) / (2.0 * h);
    let right = (-3.0 * u[m] + 4.0 * u[m + 1] - u[m + 2]) / (2.0 * h);
    Ok((p.kappa * left - right).abs())
}
