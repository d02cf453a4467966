use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::config::{input_maps, stream_seed, EvalGrid, NetworkConfig, SamplingMode, STREAM_LAYER, STREAM_POINTS, STREAM_SUBSTRATE};
use super::record::{EpochLoss, RunRecord, RunStatus, Stage};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{FieldModel, Network, TokenBatch};
use crate::oracle::{solve_two_region, FieldGrid, SolverConfig};
use crate::physics::{build_plan, forward_total_loss, AuxConfig, Bound, DimensionlessProblem, InstancePlan, LossWeights, PdeSource, PlanRequest, INTERFACE};
use crate::report::{ErrorReport, Provenance};
use crate::sampling::{build_dataset, pointwise_dataset, Dataset, Region, SamplingConfig};

pub const FORWARD_EPOCHS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub problem: DimensionlessProblem,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub sampling: SamplingMode,
    #[serde(default)]
    pub dataset: SamplingConfig,
    #[serde(default)]
    pub aux: AuxConfig,
    #[serde(default)]
    pub weights: LossWeights,
    pub epochs: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    /// Rescale each instance's inputs to `[-1, 1]²`.
    #[serde(default)]
    pub normalize_inputs: bool,
    #[serde(default)]
    pub eval: EvalGrid,
    #[serde(default)]
    pub oracle: SolverConfig,
}

impl ForwardConfig {
    pub fn new(problem: DimensionlessProblem) -> Self {
        Self {
            problem,
            network: NetworkConfig::default(),
            sampling: SamplingMode::Sequence,
            dataset: SamplingConfig::default(),
            aux: AuxConfig::default(),
            weights: LossWeights::default(),
            epochs: FORWARD_EPOCHS,
            adam: AdamConfig::default(),
            seed: 0,
            normalize_inputs: false,
            eval: EvalGrid::default(),
            oracle: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        match &self.network {
            NetworkConfig::Htf(c) => c.validate(),
            NetworkConfig::Pinn(c) => c.validate(),
        }
    }

    /// Total collocation tokens (sequence mode) or points (pointwise mode).
    pub fn collocation_budget(&self) -> usize {
        self.dataset.budget.unwrap_or_else(|| self.dataset.total_tokens())
    }
}

/// The collocation set for one epoch.
pub fn forward_dataset(cfg: &ForwardConfig, epoch: usize) -> Result<Dataset> {
    let p = &cfg.problem;
    match cfg.sampling {
        SamplingMode::Sequence => build_dataset(&cfg.dataset, p.layer_bounds(), p.substrate_bounds(), p.t_max, epoch),
        SamplingMode::Pointwise => pointwise_dataset(
            cfg.collocation_budget(),
            p.layer_bounds(),
            p.substrate_bounds(),
            p.t_max,
            cfg.dataset.dx,
            cfg.dataset.dt,
            stream_seed(cfg.seed, STREAM_POINTS),
        ),
    }
}

/// Plans for both instances carrying all forward terms.
pub fn forward_plans(cfg: &ForwardConfig, ds: &Dataset) -> Result<(InstancePlan, InstancePlan)> {
    let plan = |region: Region| {
        let pde = match ds {
            Dataset::Sequences(_) => PdeSource::Sequences(ds.sequences(region)),
            Dataset::Points(_) => PdeSource::Points(ds.points(region), cfg.dataset.dt),
        };
        build_plan(&cfg.problem, region, &cfg.aux, &PlanRequest { pde, bc: true, ic: true, interface: true, sensors: None })
    };
    Ok((plan(Region::Layer)?, plan(Region::Substrate)?))
}

pub(crate) fn gradients(g: &Graph, vars: &[Var]) -> Vec<Array2<f64>> {
    vars.iter().map(|&v| g.grad(v)).collect()
}

/// Predictions on a tensor grid, one token per point; the layer instance
/// covers `x̄ ≤ 1` and the substrate instance the rest.
pub fn predict_field<M: FieldModel>(layer: &M, substrate: &M, x: &[f64], t: &[f64]) -> Result<FieldGrid> {
    let mut values = Array2::zeros((t.len(), x.len()));
    for (model, in_region) in [(layer, true), (substrate, false)] {
        let pts: Vec<(usize, usize)> =
            (0..t.len()).flat_map(|l| (0..x.len()).map(move |n| (l, n))).filter(|&(_, n)| (x[n] <= INTERFACE) == in_region).collect();
        if pts.is_empty() {
            continue;
        }
        let coords = Array2::from_shape_fn((pts.len(), 2), |(i, j)| if j == 0 { x[pts[i].1] } else { t[pts[i].0] });
        let u = model.predict(&TokenBatch::pointwise(coords)?)?;
        for (&(l, n), v) in pts.iter().zip(u) {
            values[[l, n]] = v;
        }
    }
    FieldGrid::new(x.to_vec(), t.to_vec(), values, None)
}

pub struct ForwardOutcome {
    pub layer: Network,
    pub substrate: Network,
    pub record: RunRecord,
    pub prediction: FieldGrid,
    pub reference: FieldGrid,
    pub report: ErrorReport,
}

/// Both instances trained jointly on the composite objective, full batch,
/// then compared with the finite-difference solution.
pub fn train_forward(cfg: &ForwardConfig) -> Result<ForwardOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (map_l, map_s) = input_maps(&cfg.problem, cfg.normalize_inputs);
    let mut layer = cfg.network.build(stream_seed(cfg.seed, STREAM_LAYER), map_l)?;
    let mut substrate = cfg.network.build(stream_seed(cfg.seed, STREAM_SUBSTRATE), map_s)?;
    let mut opt_l = AdamState::new(cfg.adam, layer.params().values())?;
    let mut opt_s = AdamState::new(cfg.adam, substrate.params().values())?;
    let mut record = RunRecord::new("forward", serde_json::to_value(cfg)?, cfg.seed);

    let rotate = cfg.sampling == SamplingMode::Sequence && cfg.dataset.rotate_times;
    let mut plans = forward_plans(cfg, &forward_dataset(cfg, 0)?)?;
    for epoch in 0..cfg.epochs {
        if rotate && epoch > 0 {
            plans = forward_plans(cfg, &forward_dataset(cfg, epoch)?)?;
        }
        let mut g = Graph::new();
        let pl = layer.params().bind(&mut g, true)?;
        let ps = substrate.params().bind(&mut g, true)?;
        let loss = forward_total_loss(
            &mut g,
            &Bound { model: &layer, params: &pl, plan: &plans.0 },
            &Bound { model: &substrate, params: &ps, plan: &plans.1 },
            &cfg.problem,
            &cfg.weights,
        )?;
        let breakdown = loss.breakdown(&g);
        if !breakdown.total.is_finite() {
            record.status = RunStatus::Diverged { epoch, reason: format!("total loss {}", breakdown.total) };
            log::error!("forward run diverged at epoch {epoch}");
            break;
        }
        g.backward(loss.total)?;
        opt_l.step(layer.params_mut().values_mut(), &gradients(&g, &pl))?;
        opt_s.step(substrate.params_mut().values_mut(), &gradients(&g, &ps))?;
        if epoch % 50 == 0 || epoch + 1 == cfg.epochs {
            log::info!("epoch {epoch}: total {:.4e}", breakdown.total);
        }
        record.losses.push(EpochLoss { epoch, stage: Stage::Forward, loss: breakdown });
    }

    let reference_full = solve_two_region(&cfg.problem, &cfg.oracle)?;
    let (x, t) = cfg.eval.axes(cfg.problem.t_max)?;
    let reference = reference_full.resample(x.clone(), t.clone())?;
    let prediction = predict_field(&layer, &substrate, &x, &t)?;
    let report = ErrorReport::compare(
        &prediction,
        &reference,
        Provenance {
            config_hash: Some(crate::report::config_hash(cfg)?),
            seed: Some(cfg.seed),
            oracle_dx: Some(cfg.oracle.dx),
            oracle_dt: Some(cfg.oracle.dt),
            reference: "finite-difference oracle".into(),
        },
    )?;
    record.summary = Some(report.summary.clone());
    record.global_errors = Some(report.global.clone());
    record.wall_clock_s = started.elapsed().as_secs_f64();
    if let RunStatus::Diverged { epoch, reason } = &record.status {
        log::warn!("returning partial forward run (diverged at {epoch}: {reason})");
    }
    Ok(ForwardOutcome { layer, substrate, record, prediction, reference, report })
}

pub(crate) fn check_budget(cfg: &ForwardConfig, ds: &Dataset) -> Result<()> {
    if ds.size() != cfg.collocation_budget() {
        return Err(Error::invalid(format!("dataset holds {} points, budget is {}", ds.size(), cfg.collocation_budget())));
    }
    Ok(())
}
