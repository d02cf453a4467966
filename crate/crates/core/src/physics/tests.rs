use super::*;
use approx::assert_abs_diff_eq;
use ndarray::Array2;
use proptest::prelude::*;
use std::f64::consts::PI;

use crate::autodiff::{Graph, Var};
use crate::model::{HtfConfig, HtfModel, ParamStore};
use crate::sampling::{build_dataset, expand_neighborhood, Anchor, Bounds, SamplingConfig};

/// A parameter-free "network" returning a closed-form field.
struct Exact<F: Fn(f64, f64) -> f64> {
    f: F,
    params: ParamStore,
}

type Boxed<'a> = Box<dyn Fn(f64, f64) -> f64 + 'a>;

fn exact<'a>(f: impl Fn(f64, f64) -> f64 + 'a) -> Exact<Boxed<'a>> {
    Exact { f: Box::new(f), params: ParamStore::new() }
}

impl<F: Fn(f64, f64) -> f64> FieldModel for Exact<F> {
    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn forward(&self, g: &mut Graph, _p: &[Var], batch: &TokenBatch) -> Result<Var> {
        let c = batch.coords();
        g.constant(Array2::from_shape_fn((c.nrows(), 1), |(i, _)| (self.f)(c[[i, 0]], c[[i, 1]])))
    }
}

fn layer_seq(x: f64, t: f64, d: f64) -> SequenceBatch {
    expand_neighborhood(Anchor { x, t, region: Region::Layer }, Bounds { lo: 0.0, hi: 1.0 }, 5, 20, d, d).unwrap()
}

#[test]
fn copper_ratios() {
    assert_eq!(nondimensionalize(COPPER_ALPHA, COPPER_KAPPA).unwrap(), (1.0, 1.0, 1.0));
    let (a, k, rc) = nondimensionalize(2.28e-5, 95.52).unwrap();
    assert_abs_diff_eq!(a, 0.2, epsilon = 1e-12);
    assert_abs_diff_eq!(k, 0.24, epsilon = 1e-12);
    assert_abs_diff_eq!(rc, 1.2, epsilon = 1e-12);
    assert!(nondimensionalize(0.0, 1.0).is_err());
    assert!(nondimensionalize(1.0, -1.0).is_err());
}

#[test]
fn constant_field_residual_is_zero() {
    let r = pde_residual(&FnField(|_, _| 0.4), &layer_seq(0.5, 0.3, 1e-3), 0.3, 0.0, 1.0).unwrap();
    assert_eq!(r, 0.0);
}

fn decaying_mode(alpha: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, t| (-alpha * PI * PI * t).exp() * (PI * x).cos()
}

#[test]
fn exact_solution_residual_is_small() {
    let f = FnField(decaying_mode(0.3));
    for (x, t) in [(0.1, 0.0), (0.5, 0.0), (0.9, 0.45), (0.3, 0.95)] {
        let r = pde_residual(&f, &layer_seq(x, t, 1e-3), 0.3, 0.0, 1.0).unwrap();
        assert!(r < 1e-5, "residual {r} at ({x}, {t})");
    }
}

#[test]
fn parabola_residual_per_token() {
    let s = layer_seq(0.5, 0.2, 1e-3);
    let r = pde_residuals(&FnField(|x: f64, _| x * x), &s, 0.3, 0.0, 1.0).unwrap();
    assert_eq!(r.len(), 3 * 19);
    for v in r {
        assert_abs_diff_eq!(v * v, 0.36, epsilon = 1e-7);
    }
}

#[test]
fn source_enters_through_heat_capacity() {
    // ū = s·t̄ solves ū_t = ᾱ ū_xx + w̄/ρ̄c̄ with s = w̄/ρ̄c̄.
    let (w, rc) = (2.0, 1.6);
    let s = layer_seq(0.5, 0.2, 1e-3);
    let r = pde_residual(&FnField(move |_, t| w / rc * t), &s, 0.3, w, rc).unwrap();
    assert!(r < 1e-20, "{r}");
}

#[test]
fn stencil_error_shrinks_under_refinement() {
    // Max residual of the exact mode at halved spacings: second order in
    // both directions for this time-centered stencil.
    let f = FnField(decaying_mode(0.3));
    let err = |d: f64| {
        let s = expand_neighborhood(Anchor { x: 0.3, t: 0.2, region: Region::Layer }, Bounds { lo: 0.0, hi: 1.0 }, 3, 2, d, d).unwrap();
        pde_residuals(&f, &s, 0.3, 0.0, 1.0).unwrap().iter().fold(0.0f64, |m, r| m.max(r.abs()))
    };
    let (e1, e2, e3) = (err(4e-2), err(2e-2), err(1e-2));
    let p1 = (e1 / e2).log2();
    let p2 = (e2 / e3).log2();
    assert!(p1 > 1.8 && p2 > 1.8, "orders {p1} {p2}");
}

#[test]
fn residual_scales_linearly_with_field() {
    let s = layer_seq(0.4, 0.1, 1e-3);
    let base = pde_residuals(&FnField(|x: f64, t: f64| (x * 3.0).sin() * (1.0 + t * t)), &s, 0.3, 0.0, 1.0).unwrap();
    let c = -2.5;
    let scaled = pde_residuals(&FnField(move |x: f64, t: f64| c * (x * 3.0).sin() * (1.0 + t * t)), &s, 0.3, 0.0, 1.0).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert_abs_diff_eq!(c * a, *b, epsilon = 1e-9 * a.abs().max(1.0));
    }
}

#[test]
fn interface_examples() {
    let times = [0.1, 0.5, 0.9];
    let lin = FnField(|x: f64, _| x);
    let (t, f) = interface_residuals(&lin, &lin, 1.0, &times, 1e-3).unwrap();
    assert_eq!(t, 0.0);
    assert!(f < 1e-20, "{f}");
    let (t, f) = interface_residuals(&FnField(|x: f64, _| 2.0 * x - 1.0), &FnField(|x: f64, _| x), 0.5, &times, 1e-3).unwrap();
    assert_abs_diff_eq!(t, 0.0, epsilon = 1e-24);
    assert!(f < 1e-20, "{f}");
    let (t, _) = interface_residuals(&FnField(|_, _| 1.0), &FnField(|_, _| 0.0), 0.5, &times, 1e-3).unwrap();
    assert_eq!(t, 1.0);
}

#[test]
fn boundary_examples() {
    let p = DimensionlessProblem::benchmark();
    let left = [(0.0, 0.1), (0.0, 0.7)];
    assert!(boundary_residual(&FnField(|x: f64, _| (x - 0.0).powi(2) + 3.0), &p, Boundary::Left, &left, 1e-3).unwrap() < 1e-20);
    let ramp = DimensionlessProblem::s1b();
    assert_eq!(boundary_residual(&FnField(|_, t| t), &ramp, Boundary::Left, &left, 1e-3).unwrap(), 0.0);
    let far = [(10.0, 0.2), (10.0, 0.9)];
    assert_eq!(boundary_residual(&FnField(|_, _| 1.0), &p, Boundary::Far, &far, 1e-3).unwrap(), 1.0);
    assert!(boundary_residual(&FnField(|_, _| 1.0), &p, Boundary::Far, &[(9.0, 0.2)], 1e-3).is_err());
}

#[test]
fn initial_examples() {
    let p = DimensionlessProblem::benchmark();
    let step = FnField(|x: f64, _| if x < 1.0 { 1.0 } else { 0.0 });
    assert_eq!(initial_residual(&step, &p, Region::Layer, &[(0.2, 0.0), (0.99, 0.0)]).unwrap(), 0.0);
    assert_eq!(initial_residual(&step, &p, Region::Substrate, &[(1.01, 0.0), (5.0, 0.0)]).unwrap(), 0.0);
    assert!(initial_residual(&step, &p, Region::Layer, &[(1.0, 0.0)]).is_err());
    assert!(initial_residual(&step, &p, Region::Substrate, &[(1.0, 0.0)]).is_err());
    assert!(initial_residual(&step, &p, Region::Layer, &[(0.5, 0.1)]).is_err());
}

fn plans(problem: &DimensionlessProblem, sensors: Option<&[(f64, f64, f64)]>) -> (InstancePlan, InstancePlan) {
    let ds = build_dataset(&SamplingConfig::default(), problem.layer_bounds(), problem.substrate_bounds(), problem.t_max, 0).unwrap();
    let aux = AuxConfig::default();
    let l = build_plan(problem, Region::Layer, &aux, &PlanRequest {
        pde: PdeSource::Sequences(ds.sequences(Region::Layer)),
        bc: true,
        ic: true,
        interface: true,
        sensors: None,
    })
    .unwrap();
    let s = build_plan(problem, Region::Substrate, &aux, &PlanRequest {
        pde: PdeSource::Sequences(ds.sequences(Region::Substrate)),
        bc: true,
        ic: true,
        interface: true,
        sensors,
    })
    .unwrap();
    (l, s)
}

fn zero_problem() -> DimensionlessProblem {
    DimensionlessProblem { left_bc: LeftBc::Fixed { value: 0.0 }, ic_layer: 0.0, ..DimensionlessProblem::benchmark() }
}

#[test]
fn plan_token_counts() {
    let (l, s) = plans(&DimensionlessProblem::benchmark(), None);
    let aux = AuxConfig::default();
    // adiabatic left end reads three tokens per time
    assert_eq!(l.batch.len(), 2000 + 3 * aux.bc_points + aux.ic_points + 3 * aux.interface_points);
    assert_eq!(s.batch.len(), 3000 + aux.bc_points + aux.ic_points + 3 * aux.interface_points);
    assert_eq!(l.pde.as_ref().unwrap().dt.nrows(), 20 * 3 * 19);
}

#[test]
fn exact_zero_field_has_zero_total() {
    let p = zero_problem();
    let (lp, sp) = plans(&p, None);
    let m = exact(|_, _| 0.0);
    let mut g = Graph::new();
    let l = forward_total_loss(
        &mut g,
        &Bound { model: &m, params: &[], plan: &lp },
        &Bound { model: &m, params: &[], plan: &sp },
        &p,
        &LossWeights::default(),
    )
    .unwrap();
    let b = l.breakdown(&g);
    assert_eq!(b.terms.len(), 8);
    assert_eq!(b.total, 0.0);
}

#[test]
fn interface_weights_and_reconciliation() {
    let p = DimensionlessProblem::benchmark();
    let (lp, sp) = plans(&p, None);
    let ml = exact(|x: f64, t: f64| 1.0 + 0.1 * x + t);
    let ms = exact(|x: f64, t: f64| 0.3 * x * t);
    let mut g = Graph::new();
    let l = forward_total_loss(
        &mut g,
        &Bound { model: &ml, params: &[], plan: &lp },
        &Bound { model: &ms, params: &[], plan: &sp },
        &p,
        &LossWeights::default(),
    )
    .unwrap();
    let b = l.breakdown(&g);
    for name in ["interface_t", "interface_flux"] {
        let t = b.get(name).unwrap();
        assert_eq!(t.weight, 5.0);
        assert_eq!(t.weighted, 5.0 * t.raw);
        assert!(t.raw > 0.0);
    }
    assert!((b.total - b.recomputed_total()).abs() <= 1e-12 * b.total.abs());
}

#[test]
fn stage_a_sensor_term() {
    let p = DimensionlessProblem::inverse(0.2, 0.24);
    let xs = [1.05, 1.1, 1.5, 2.0, 3.0, 4.0];
    let ms: Vec<(f64, f64, f64)> = xs
        .iter()
        .flat_map(|&x| (1..=20).map(move |j| (x, j as f64 / 20.0, (x * j as f64).sin() * 0.3)))
        .collect();
    assert_eq!(ms.len(), 120);
    let (_, sp) = plans(&p, Some(&ms));
    assert_eq!(sp.sensors.as_ref().unwrap().map.nrows(), 120);
    let zero = exact(|_, _| 0.0);
    let mut g = Graph::new();
    let l = stage_a_loss(&mut g, &Bound { model: &zero, params: &[], plan: &sp }, &p, &LossWeights::default()).unwrap();
    let b = l.breakdown(&g);
    let want = ms.iter().map(|m| m.2 * m.2).sum::<f64>() / 120.0;
    assert_abs_diff_eq!(b.get("sensor").unwrap().raw, want, epsilon = 1e-15);
    assert_eq!(b.get("sensor").unwrap().weight, 10.0);

    let perfect = exact(|x: f64, t: f64| {
        ms.iter().find(|m| (m.0 - x).abs() < 1e-12 && (m.1 - t).abs() < 1e-12).map_or(0.0, |m| m.2)
    });
    let mut g = Graph::new();
    let l = stage_a_loss(&mut g, &Bound { model: &perfect, params: &[], plan: &sp }, &p, &LossWeights::default()).unwrap();
    assert_eq!(l.breakdown(&g).get("sensor").unwrap().raw, 0.0);
}

#[test]
fn measurements_must_be_on_substrate_side() {
    let p = DimensionlessProblem::inverse(0.2, 0.24);
    let bad = [(0.9, 0.5, 0.1)];
    let r = build_plan(&p, Region::Substrate, &AuxConfig::default(), &PlanRequest {
        pde: PdeSource::None,
        bc: false,
        ic: false,
        interface: false,
        sensors: Some(&bad),
    });
    assert!(r.is_err());
}

#[test]
fn hinge_values() {
    let band = Feasibility::default().rho_c;
    assert_eq!(rho_c_hinge(1.2, band), 0.0);
    let rc = 0.01 / 0.9;
    assert_abs_diff_eq!(rho_c_hinge(rc, band), (0.04 - rc).powi(2), epsilon = 1e-16);
    assert!(rho_c_hinge(rc, band) > 0.0);
    assert_abs_diff_eq!(rho_c_hinge(2.0, band), 0.49, epsilon = 1e-15);
}

fn small_htf(seed: u64) -> HtfModel {
    HtfModel::new(HtfConfig { d_model: 8, n_heads: 2, d_hidden: 8, n_layers: 1, head_hidden: [8, 8], ..HtfConfig::default() }, seed).unwrap()
}

#[test]
fn stage_b_freezes_substrate_and_couples_material() {
    let p = DimensionlessProblem::inverse(0.2, 0.24);
    let aux = AuxConfig { bc_points: 5, ic_points: 5, interface_points: 5, dx: 1e-3 };
    let ds = build_dataset(&SamplingConfig { layer_anchors: 2, substrate_anchors: 2, budget: None, ..SamplingConfig::default() }, p.layer_bounds(), p.substrate_bounds(), 1.0, 0).unwrap();
    let lp = build_plan(&p, Region::Layer, &aux, &PlanRequest { pde: PdeSource::Sequences(ds.sequences(Region::Layer)), bc: true, ic: true, interface: true, sensors: None }).unwrap();
    let sp = build_plan(&p, Region::Substrate, &aux, &PlanRequest { pde: PdeSource::None, bc: false, ic: false, interface: true, sensors: None }).unwrap();
    let (ml, ms) = (small_htf(1), small_htf(2));

    let mut g = Graph::new();
    let pl = ml.params().bind(&mut g, true).unwrap();
    let ps = ms.params().bind(&mut g, false).unwrap();
    let a = g.scalar_param(0.9).unwrap();
    let k = g.scalar_param(0.01).unwrap();
    let loss = stage_b_loss(&mut g, &Bound { model: &ml, params: &pl, plan: &lp }, &Bound { model: &ms, params: &ps, plan: &sp }, a, k, &p, &LossWeights::default(), &Feasibility::default()).unwrap();
    let b = loss.breakdown(&g);
    assert_abs_diff_eq!(b.get("rho_c").unwrap().raw, rho_c_hinge(0.01 / 0.9, (0.04, 1.3)), epsilon = 1e-15);
    g.backward(loss.total).unwrap();
    assert!(ps.iter().all(|&v| g.grad(v).iter().all(|&x| x == 0.0)));
    assert!(g.grad(k)[[0, 0]] != 0.0 && g.grad(a)[[0, 0]] != 0.0);
    assert!(pl.iter().any(|&v| g.grad(v).iter().any(|&x| x != 0.0)));

    let mut g = Graph::new();
    let pl = ml.params().bind(&mut g, true).unwrap();
    let ps = ms.params().bind(&mut g, true).unwrap();
    let a = g.scalar_param(0.9).unwrap();
    let k = g.scalar_param(0.01).unwrap();
    let r = stage_b_loss(&mut g, &Bound { model: &ml, params: &pl, plan: &lp }, &Bound { model: &ms, params: &ps, plan: &sp }, a, k, &p, &LossWeights::default(), &Feasibility::default());
    assert!(r.is_err());
}

#[test]
fn loss_weights_require_every_field() {
    let mut v = serde_json::to_value(LossWeights::default()).unwrap();
    assert!(serde_json::from_value::<LossWeights>(v.clone()).is_ok());
    v.as_object_mut().unwrap().remove("interface_flux");
    assert!(serde_json::from_value::<LossWeights>(v).is_err());
}

#[test]
fn projection_examples() {
    let f = Feasibility::default();
    let e = MaterialEstimate::new(0.2, 0.24);
    assert_eq!(project_estimate(e, &f), e);
    assert_eq!(project_estimate(MaterialEstimate::new(1.5, 0.005), &f), MaterialEstimate::new(0.9, 0.01));
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_in_box(a in -2.0f64..3.0, k in -2.0f64..3.0) {
        let f = Feasibility::default();
        let p = project_estimate(MaterialEstimate::new(a, k), &f);
        prop_assert!(p.in_box(&f));
        prop_assert_eq!(project_estimate(p, &f), p);
    }
}
