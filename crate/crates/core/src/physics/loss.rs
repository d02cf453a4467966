//! Composite objectives for forward training and the two inverse stages.

use serde::{Deserialize, Serialize};

use super::plan::{InstancePlan, PdeTerm, ValueTerm};
use super::problem::{DimensionlessProblem, Feasibility};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::FieldModel;

/// One weight per loss term. Every field is required when read from a
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub pde_layer: f64,
    pub pde_substrate: f64,
    pub interface_t: f64,
    pub interface_flux: f64,
    pub bc_layer: f64,
    pub bc_substrate: f64,
    pub ic_layer: f64,
    pub ic_substrate: f64,
    pub sensor: f64,
    pub reg_layer: f64,
    pub reg_substrate: f64,
    pub rho_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pde_layer: 1.0,
            pde_substrate: 1.0,
            interface_t: 5.0,
            interface_flux: 5.0,
            bc_layer: 1.0,
            bc_substrate: 1.0,
            ic_layer: 1.0,
            ic_substrate: 1.0,
            sensor: 10.0,
            reg_layer: 1e-6,
            reg_substrate: 1e-6,
            rho_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.pde_layer,
            self.pde_substrate,
            self.interface_t,
            self.interface_flux,
            self.bc_layer,
            self.bc_substrate,
            self.ic_layer,
            self.ic_substrate,
            self.sensor,
            self.reg_layer,
            self.reg_substrate,
            self.rho_c,
        ];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::config("loss weights must be finite and non-negative"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermValue {
    pub name: String,
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

/// Values of every term of an objective at one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: Vec<TermValue>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, name: &str) -> Option<&TermValue> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Sum of the weighted terms, recomputed.
    pub fn recomputed_total(&self) -> f64 {
        self.terms.iter().map(|t| t.weighted).sum()
    }
}

/// A recorded objective: the total and its named parts.
pub struct LossGraph {
    pub total: Var,
    terms: Vec<(&'static str, Var, f64)>,
}

#[derive(Default)]
struct Terms(Vec<(&'static str, Var, f64)>);

impl Terms {
    fn add(&mut self, name: &'static str, raw: Var, weight: f64) {
        self.0.push((name, raw, weight));
    }

    fn finish(self, g: &mut Graph) -> Result<LossGraph> {
        let mut total: Option<Var> = None;
        for &(_, raw, w) in &self.0 {
            let wv = g.scale(raw, w)?;
            total = Some(match total {
                Some(t) => g.add(t, wv)?,
                None => wv,
            });
        }
        let total = total.ok_or_else(|| Error::invalid("objective has no terms"))?;
        Ok(LossGraph { total, terms: self.0 })
    }
}

impl LossGraph {
    /// Raw (unweighted) value of a named term.
    pub fn term(&self, name: &str) -> Option<Var> {
        self.terms.iter().find(|t| t.0 == name).map(|t| t.1)
    }

    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let terms: Vec<TermValue> = self
            .terms
            .iter()
            .map(|&(name, raw, weight)| {
                let r = g.scalar_value(raw);
                TermValue { name: name.to_string(), raw: r, weight, weighted: weight * r }
            })
            .collect();
        LossBreakdown { terms, total: g.scalar_value(self.total) }
    }
}

/// A network instance bound into a graph together with its plan.
pub struct Bound<'a, M: FieldModel> {
    pub model: &'a M,
    pub params: &'a [Var],
    pub plan: &'a InstancePlan,
}

impl<M: FieldModel> Bound<'_, M> {
    pub fn forward(&self, g: &mut Graph) -> Result<Var> {
        self.model.forward(g, self.params, &self.plan.batch)
    }
}

fn missing(what: &str) -> Error {
    Error::invalid(format!("plan lacks the {what} term"))
}

/// Mean square of `ū_t − α·ū_xx − s`.
pub fn pde_term(g: &mut Graph, u: Var, pde: &PdeTerm, alpha: Var, source: Option<Var>) -> Result<Var> {
    let ut = g.sparse(u, pde.dt.clone())?;
    let uxx = g.sparse(u, pde.dxx.clone())?;
    let diff = g.mul(uxx, alpha)?;
    let mut r = g.sub(ut, diff)?;
    if let Some(s) = source {
        r = g.sub(r, s)?;
    }
    g.mean_square(r)
}

/// Mean square of `map·ū − target`.
pub fn value_term(g: &mut Graph, u: Var, term: &ValueTerm) -> Result<Var> {
    let v = g.sparse(u, term.map.clone())?;
    let t = g.constant(term.target.clone())?;
    let r = g.sub(v, t)?;
    g.mean_square(r)
}

/// Temperature and flux mismatch at the interface.
pub fn interface_terms(g: &mut Graph, u_layer: Var, layer: &InstancePlan, u_sub: Var, sub: &InstancePlan, kappa: Var) -> Result<(Var, Var)> {
    let il = layer.interface.as_ref().ok_or_else(|| missing("layer interface"))?;
    let is = sub.interface.as_ref().ok_or_else(|| missing("substrate interface"))?;
    if il.times != is.times {
        return Err(Error::invalid("layer and substrate interface times differ"));
    }
    let vl = g.sparse(u_layer, il.value.clone())?;
    let vs = g.sparse(u_sub, is.value.clone())?;
    let dv = g.sub(vl, vs)?;
    let temp = g.mean_square(dv)?;
    let sl = g.sparse(u_layer, il.slope.clone())?;
    let ss = g.sparse(u_sub, is.slope.clone())?;
    let fl = g.mul(sl, kappa)?;
    let df = g.sub(fl, ss)?;
    let flux = g.mean_square(df)?;
    Ok((temp, flux))
}

/// `Σ θ²` over the given parameter leaves.
pub fn reg_term(g: &mut Graph, params: &[Var]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &p in params {
        let sq = g.square(p)?;
        let s = g.sum(sq)?;
        acc = Some(match acc {
            Some(a) => g.add(a, s)?,
            None => s,
        });
    }
    acc.map_or_else(|| g.scalar(0.0), Ok)
}

/// Quadratic hinge keeping `κ̄/ᾱ` inside `band`.
pub fn rho_c_term(g: &mut Graph, alpha: Var, kappa: Var, band: (f64, f64)) -> Result<Var> {
    let rc = g.div(kappa, alpha)?;
    let lo = g.scalar(band.0)?;
    let hi = g.scalar(band.1)?;
    let below = g.sub(lo, rc)?;
    let below = g.relu(below)?;
    let above = g.sub(rc, hi)?;
    let above = g.relu(above)?;
    let b2 = g.square(below)?;
    let a2 = g.square(above)?;
    g.add(b2, a2)
}

/// The eight-term objective for forward training of both instances.
pub fn forward_total_loss<M: FieldModel>(
    g: &mut Graph,
    layer: &Bound<M>,
    sub: &Bound<M>,
    problem: &DimensionlessProblem,
    w: &LossWeights,
) -> Result<LossGraph> {
    w.validate()?;
    let ul = layer.forward(g)?;
    let us = sub.forward(g)?;
    let mut l = Terms::default();
    let alpha = g.scalar(problem.alpha)?;
    let alpha_s = g.scalar(problem.substrate_alpha)?;
    let kappa = g.scalar(problem.kappa)?;
    let src = if problem.source != 0.0 { Some(g.scalar(problem.source_rate())?) } else { None };

    let pl = pde_term(g, ul, layer.plan.pde.as_ref().ok_or_else(|| missing("layer PDE"))?, alpha, src)?;
    l.add("pde_layer", pl, w.pde_layer);
    let ps = pde_term(g, us, sub.plan.pde.as_ref().ok_or_else(|| missing("substrate PDE"))?, alpha_s, None)?;
    l.add("pde_substrate", ps, w.pde_substrate);
    let (it, iflux) = interface_terms(g, ul, layer.plan, us, sub.plan, kappa)?;
    l.add("interface_t", it, w.interface_t);
    l.add("interface_flux", iflux, w.interface_flux);
    let bl = value_term(g, ul, layer.plan.bc.as_ref().ok_or_else(|| missing("layer boundary"))?)?;
    l.add("bc_layer", bl, w.bc_layer);
    let bs = value_term(g, us, sub.plan.bc.as_ref().ok_or_else(|| missing("substrate boundary"))?)?;
    l.add("bc_substrate", bs, w.bc_substrate);
    let il = value_term(g, ul, layer.plan.ic.as_ref().ok_or_else(|| missing("layer initial"))?)?;
    l.add("ic_layer", il, w.ic_layer);
    let is = value_term(g, us, sub.plan.ic.as_ref().ok_or_else(|| missing("substrate initial"))?)?;
    l.add("ic_substrate", is, w.ic_substrate);
    l.finish(g)
}

/// Fit of the substrate instance to the measurements, with its own physics.
pub fn stage_a_loss<M: FieldModel>(g: &mut Graph, sub: &Bound<M>, problem: &DimensionlessProblem, w: &LossWeights) -> Result<LossGraph> {
    w.validate()?;
    let us = sub.forward(g)?;
    let mut l = Terms::default();
    let alpha_s = g.scalar(problem.substrate_alpha)?;
    let ps = pde_term(g, us, sub.plan.pde.as_ref().ok_or_else(|| missing("substrate PDE"))?, alpha_s, None)?;
    l.add("pde_substrate", ps, w.pde_substrate);
    let bs = value_term(g, us, sub.plan.bc.as_ref().ok_or_else(|| missing("substrate boundary"))?)?;
    l.add("bc_substrate", bs, w.bc_substrate);
    let is = value_term(g, us, sub.plan.ic.as_ref().ok_or_else(|| missing("substrate initial"))?)?;
    l.add("ic_substrate", is, w.ic_substrate);
    let sensors = sub.plan.sensors.as_ref().ok_or_else(|| missing("sensor"))?;
    let sm = value_term(g, us, sensors)?;
    l.add("sensor", sm, w.sensor);
    let reg = reg_term(g, sub.params)?;
    l.add("reg_substrate", reg, w.reg_substrate);
    l.finish(g)
}

/// Layer physics coupled to the frozen substrate through the interface,
/// with `alpha`/`kappa` as graph values (normally trainable leaves).
#[allow(clippy::too_many_arguments)]
pub fn stage_b_loss<M: FieldModel>(
    g: &mut Graph,
    layer: &Bound<M>,
    sub: &Bound<M>,
    alpha: Var,
    kappa: Var,
    problem: &DimensionlessProblem,
    w: &LossWeights,
    feasibility: &Feasibility,
) -> Result<LossGraph> {
    w.validate()?;
    if sub.params.iter().any(|&p| g.is_trainable(p)) {
        return Err(Error::invalid("the substrate instance must be frozen during the second stage"));
    }
    let ul = layer.forward(g)?;
    let us = sub.forward(g)?;
    let mut l = Terms::default();
    let src = if problem.source != 0.0 {
        // w̄/ρ̄c̄ = w̄·ᾱ/κ̄ with the current estimates
        let ratio = g.div(alpha, kappa)?;
        Some(g.scale(ratio, problem.source)?)
    } else {
        None
    };
    let pl = pde_term(g, ul, layer.plan.pde.as_ref().ok_or_else(|| missing("layer PDE"))?, alpha, src)?;
    l.add("pde_layer", pl, w.pde_layer);
    let bl = value_term(g, ul, layer.plan.bc.as_ref().ok_or_else(|| missing("layer boundary"))?)?;
    l.add("bc_layer", bl, w.bc_layer);
    let il = value_term(g, ul, layer.plan.ic.as_ref().ok_or_else(|| missing("layer initial"))?)?;
    l.add("ic_layer", il, w.ic_layer);
    let (it, iflux) = interface_terms(g, ul, layer.plan, us, sub.plan, kappa)?;
    l.add("interface_t", it, w.interface_t);
    l.add("interface_flux", iflux, w.interface_flux);
    let rc = rho_c_term(g, alpha, kappa, feasibility.rho_c)?;
    l.add("rho_c", rc, w.rho_c);
    let reg = reg_term(g, layer.params)?;
    l.add("reg_layer", reg, w.reg_layer);
    l.finish(g)
}
