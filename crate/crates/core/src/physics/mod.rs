//! Problem definition, finite-difference residuals and composite losses.

mod loss;
mod plan;
mod problem;
pub mod stencil;

pub use loss::{
    forward_total_loss, interface_terms, pde_term, reg_term, rho_c_term, stage_a_loss, stage_b_loss, value_term, Bound,
    LossBreakdown, LossGraph, LossWeights, TermValue,
};
pub use plan::{aux_times, build_plan, ic_points, AuxConfig, InstancePlan, InterfaceTerm, PdeSource, PdeTerm, PlanRequest, ValueTerm};
pub use problem::{
    nondimensionalize, project_estimate, rho_c_hinge, DimensionlessProblem, Feasibility, LeftBc, MaterialEstimate, COPPER_ALPHA,
    COPPER_KAPPA, INTERFACE,
};

use crate::error::{Error, Result};
use crate::model::{FieldModel, TokenBatch};
use crate::sampling::{Region, SequenceBatch};

/// Anything that yields one temperature per token.
pub trait Evaluate {
    fn evaluate(&self, batch: &TokenBatch) -> Result<Vec<f64>>;
}

impl<M: FieldModel> Evaluate for M {
    fn evaluate(&self, batch: &TokenBatch) -> Result<Vec<f64>> {
        self.predict(batch)
    }
}

/// A closed-form field `ū(x̄, t̄)`.
pub struct FnField<F>(pub F);

impl<F: Fn(f64, f64) -> f64> Evaluate for FnField<F> {
    fn evaluate(&self, batch: &TokenBatch) -> Result<Vec<f64>> {
        Ok(batch.coords().rows().into_iter().map(|r| (self.0)(r[0], r[1])).collect())
    }
}

fn mean_sq(v: &[f64]) -> f64 {
    v.iter().map(|r| r * r).sum::<f64>() / v.len() as f64
}

/// Pointwise residuals of `ū_t = ᾱ·ū_xx + w̄/ρ̄c̄` on one neighborhood.
pub fn pde_residuals(field: &impl Evaluate, seq: &SequenceBatch, alpha: f64, source: f64, rho_c: f64) -> Result<Vec<f64>> {
    let batch = TokenBatch::from_sequences([seq.tokens.as_slice()])?;
    let u = field.evaluate(&batch)?;
    stencil::pde_residuals_from_values(&u, seq, alpha, source / rho_c)
}

/// Mean squared PDE residual on one neighborhood.
pub fn pde_residual(field: &impl Evaluate, seq: &SequenceBatch, alpha: f64, source: f64, rho_c: f64) -> Result<f64> {
    Ok(mean_sq(&pde_residuals(field, seq, alpha, source, rho_c)?))
}

/// Temperature and flux mismatch between two fields at the interface for
/// the given times, using one-sided stencils of spacing `h`.
pub fn interface_residuals(layer: &impl Evaluate, substrate: &impl Evaluate, kappa: f64, times: &[f64], h: f64) -> Result<(f64, f64)> {
    if times.is_empty() {
        return Err(Error::invalid("no interface times"));
    }
    let side = |dir: f64| -> Result<TokenBatch> {
        let seqs: Vec<Vec<(f64, f64)>> =
            times.iter().map(|&t| vec![(INTERFACE, t), (INTERFACE + dir * h, t), (INTERFACE + 2.0 * dir * h, t)]).collect();
        TokenBatch::from_sequences(seqs.iter().map(|s| s.as_slice()))
    };
    let ul = layer.evaluate(&side(-1.0)?)?;
    let us = substrate.evaluate(&side(1.0)?)?;
    let slope = |u: &[f64], i: usize, dir: f64| {
        stencil::one_sided_slope([3 * i, 3 * i + 1, 3 * i + 2], h, dir).iter().map(|&(c, w)| w * u[c]).sum::<f64>()
    };
    let mut dt = Vec::with_capacity(times.len());
    let mut df = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        dt.push(ul[3 * i] - us[3 * i]);
        df.push(kappa * slope(&ul, i, -1.0) - slope(&us, i, 1.0));
    }
    Ok((mean_sq(&dt), mean_sq(&df)))
}

/// Which boundary a boundary residual refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Left,
    Far,
}

/// Mean squared deviation from the boundary condition at `points`, which
/// must lie on the chosen boundary. An insulated left end is checked with
/// the forward one-sided slope of spacing `h`.
pub fn boundary_residual(field: &impl Evaluate, problem: &DimensionlessProblem, side: Boundary, points: &[(f64, f64)], h: f64) -> Result<f64> {
    let x0 = match side {
        Boundary::Left => 0.0,
        Boundary::Far => problem.x_max,
    };
    if points.is_empty() {
        return Err(Error::invalid("no boundary points"));
    }
    if let Some(p) = points.iter().find(|p| p.0 != x0) {
        return Err(Error::invalid(format!("point ({}, {}) is not on the boundary x = {x0}", p.0, p.1)));
    }
    let r: Vec<f64> = match (side, problem.left_bc.value(0.0)) {
        (Boundary::Left, None) => {
            let seqs: Vec<Vec<(f64, f64)>> = points.iter().map(|&(x, t)| vec![(x, t), (x + h, t), (x + 2.0 * h, t)]).collect();
            let u = field.evaluate(&TokenBatch::from_sequences(seqs.iter().map(|s| s.as_slice()))?)?;
            (0..points.len())
                .map(|i| stencil::one_sided_slope([3 * i, 3 * i + 1, 3 * i + 2], h, 1.0).iter().map(|&(c, w)| w * u[c]).sum())
                .collect()
        }
        _ => {
            let u = field.evaluate(&TokenBatch::from_sequences(points.iter().map(std::slice::from_ref))?)?;
            points
                .iter()
                .zip(&u)
                .map(|(&(_, t), &v)| {
                    let target = match side {
                        Boundary::Left => problem.left_bc.value(t).expect("value condition"),
                        Boundary::Far => problem.far_value,
                    };
                    v - target
                })
                .collect()
        }
    };
    Ok(mean_sq(&r))
}

/// Mean squared deviation from the initial temperature of `region` at
/// points on `t̄ = 0` strictly inside that region's side of the interface.
pub fn initial_residual(field: &impl Evaluate, problem: &DimensionlessProblem, region: Region, points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("no initial points"));
    }
    let inside = |x: f64| match region {
        Region::Layer => (0.0..INTERFACE).contains(&x),
        Region::Substrate => x > INTERFACE && x <= problem.x_max,
    };
    if let Some(p) = points.iter().find(|p| p.1 != 0.0 || !inside(p.0)) {
        return Err(Error::invalid(format!("point ({}, {}) is not an initial point of the {} region", p.0, p.1, region.name())));
    }
    let target = match region {
        Region::Layer => problem.ic_layer,
        Region::Substrate => problem.ic_substrate,
    };
    let u = field.evaluate(&TokenBatch::from_sequences(points.iter().map(std::slice::from_ref))?)?;
    Ok(mean_sq(&u.iter().map(|v| v - target).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests;
