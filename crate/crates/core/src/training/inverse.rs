use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::config::{input_maps, stream_seed, NetworkConfig, STREAM_LAYER, STREAM_SUBSTRATE};
use super::forward::gradients;
use super::record::{EpochLoss, RunRecord, RunStatus, Stage, TrajectoryPoint};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::{FieldModel, Network};
use crate::oracle::MeasurementSet;
use crate::physics::{
    build_plan, project_estimate, stage_a_loss, stage_b_loss, AuxConfig, Bound, DimensionlessProblem, Feasibility, InstancePlan,
    LossWeights, MaterialEstimate, PdeSource, PlanRequest, INTERFACE,
};
use crate::sampling::{build_dataset, Region, SamplingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseConfig {
    /// Geometry, boundary and initial data; its `alpha`/`kappa` are ignored.
    pub problem: DimensionlessProblem,
    pub init: MaterialEstimate,
    /// Stage A length; Stage B starts at this epoch.
    pub stage_transition: usize,
    pub stage_b_epochs: usize,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub dataset: SamplingConfig,
    #[serde(default)]
    pub aux: AuxConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Learning rate for `(ᾱ, κ̄)`; the network rate when absent.
    #[serde(default)]
    pub material_lr: Option<f64>,
    #[serde(default)]
    pub feasibility: Feasibility,
    pub seed: u64,
    #[serde(default)]
    pub normalize_inputs: bool,
}

impl InverseConfig {
    /// Heating from the left end with the default sensor-driven schedule.
    pub fn new(init: MaterialEstimate) -> Self {
        Self {
            problem: DimensionlessProblem::heating(),
            init,
            stage_transition: 1000,
            stage_b_epochs: 1000,
            network: NetworkConfig::default(),
            dataset: SamplingConfig::default(),
            aux: AuxConfig::default(),
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            material_lr: None,
            feasibility: Feasibility::default(),
            seed: 0,
            normalize_inputs: false,
        }
    }

    /// Start from the smallest admissible properties with a later switch.
    pub fn small_init() -> Self {
        Self { stage_transition: 1500, ..Self::new(MaterialEstimate::new(0.1, 0.01)) }
    }

    pub fn total_epochs(&self) -> usize {
        self.stage_transition + self.stage_b_epochs
    }

    pub fn validate(&self) -> Result<()> {
        self.working_problem(self.init).validate()?;
        self.weights.validate()?;
        self.adam.validate()?;
        if let Some(lr) = self.material_lr {
            AdamConfig::with_lr(lr).validate()?;
        }
        if !self.init.in_box(&self.feasibility) {
            return Err(Error::config(format!("initial estimate {:?} outside the feasibility box", self.init)));
        }
        match &self.network {
            NetworkConfig::Htf(c) => c.validate(),
            NetworkConfig::Pinn(c) => c.validate(),
        }
    }

    fn working_problem(&self, e: MaterialEstimate) -> DimensionlessProblem {
        DimensionlessProblem { alpha: e.alpha, kappa: e.kappa, ..self.problem.clone() }
    }
}

pub struct InverseOutcome {
    pub estimate: MaterialEstimate,
    pub layer: Network,
    pub substrate: Network,
    pub record: RunRecord,
}

/// Stage-wise driver. Stage A fits the substrate instance to the sensors
/// with the layer instance untouched; Stage B freezes the substrate and fits
/// the layer instance together with `(ᾱ, κ̄)`.
pub struct InverseTrainer {
    cfg: InverseConfig,
    layer: Network,
    substrate: Network,
    estimate: MaterialEstimate,
    sub_plan_a: InstancePlan,
    layer_plan: InstancePlan,
    sub_plan_b: InstancePlan,
    record: RunRecord,
    stage_a_done: bool,
    started: Instant,
}

impl InverseTrainer {
    pub fn new(cfg: &InverseConfig, measurements: &MeasurementSet) -> Result<Self> {
        cfg.validate()?;
        if measurements.is_empty() {
            return Err(Error::invalid("no measurements"));
        }
        if let Some(m) = measurements.entries.iter().find(|m| m.x <= INTERFACE) {
            return Err(Error::invalid(format!("measurement at x = {} is not on the substrate side", m.x)));
        }
        let problem = cfg.working_problem(cfg.init);
        let ds = build_dataset(&cfg.dataset, problem.layer_bounds(), problem.substrate_bounds(), problem.t_max, 0)?;
        let triples = measurements.triples();
        let sub_plan_a = build_plan(&problem, Region::Substrate, &cfg.aux, &PlanRequest {
            pde: PdeSource::Sequences(ds.sequences(Region::Substrate)),
            bc: true,
            ic: true,
            interface: false,
            sensors: Some(&triples),
        })?;
        let layer_plan = build_plan(&problem, Region::Layer, &cfg.aux, &PlanRequest {
            pde: PdeSource::Sequences(ds.sequences(Region::Layer)),
            bc: true,
            ic: true,
            interface: true,
            sensors: None,
        })?;
        let sub_plan_b = build_plan(&problem, Region::Substrate, &cfg.aux, &PlanRequest {
            pde: PdeSource::None,
            bc: false,
            ic: false,
            interface: true,
            sensors: None,
        })?;
        let (map_l, map_s) = input_maps(&problem, cfg.normalize_inputs);
        let mut config = serde_json::to_value(cfg)?;
        config["measurements"] = serde_json::json!({
            "count": measurements.len(),
            "sigma": measurements.sigma,
            "seed": measurements.seed,
            "truth": measurements.truth,
        });
        Ok(Self {
            layer: cfg.network.build(stream_seed(cfg.seed, STREAM_LAYER), map_l)?,
            substrate: cfg.network.build(stream_seed(cfg.seed, STREAM_SUBSTRATE), map_s)?,
            estimate: cfg.init,
            sub_plan_a,
            layer_plan,
            sub_plan_b,
            record: RunRecord::new("inverse", config, cfg.seed),
            stage_a_done: false,
            started: Instant::now(),
            cfg: cfg.clone(),
        })
    }

    pub fn estimate(&self) -> MaterialEstimate {
        self.estimate
    }

    pub fn layer(&self) -> &Network {
        &self.layer
    }

    pub fn substrate(&self) -> &Network {
        &self.substrate
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    fn push_epoch(&mut self, epoch: usize, stage: Stage, loss: crate::physics::LossBreakdown) {
        self.record.losses.push(EpochLoss { epoch, stage, loss });
        let e = self.estimate;
        self.record.trajectory.push(TrajectoryPoint { epoch, alpha: e.alpha, kappa: e.kappa, rho_c: e.rho_c() });
    }

    fn diverged(&mut self, epoch: usize, total: f64) -> Result<()> {
        let reason = format!("total loss {total}");
        self.record.status = RunStatus::Diverged { epoch, reason: reason.clone() };
        Err(Error::Diverged { epoch, reason })
    }

    pub fn run_stage_a(&mut self) -> Result<()> {
        if self.stage_a_done {
            return Err(Error::invalid("stage A already completed"));
        }
        let problem = self.cfg.working_problem(self.estimate);
        let mut opt = AdamState::new(self.cfg.adam, self.substrate.params().values())?;
        for epoch in 0..self.cfg.stage_transition {
            let mut g = Graph::new();
            let ps = self.substrate.params().bind(&mut g, true)?;
            let loss = stage_a_loss(&mut g, &Bound { model: &self.substrate, params: &ps, plan: &self.sub_plan_a }, &problem, &self.cfg.weights)?;
            let b = loss.breakdown(&g);
            if !b.total.is_finite() {
                return self.diverged(epoch, b.total);
            }
            g.backward(loss.total)?;
            opt.step(self.substrate.params_mut().values_mut(), &gradients(&g, &ps))?;
            if epoch % 100 == 0 {
                log::info!("stage A epoch {epoch}: total {:.4e}", b.total);
            }
            self.push_epoch(epoch, Stage::A, b);
        }
        self.stage_a_done = true;
        Ok(())
    }

    pub fn run_stage_b(&mut self) -> Result<()> {
        if !self.stage_a_done {
            return Err(Error::invalid("stage B requires a completed stage A"));
        }
        let cfg = &self.cfg;
        let mut opt = AdamState::new(cfg.adam, self.layer.params().values())?;
        let material_cfg = AdamConfig { lr: cfg.material_lr.unwrap_or(cfg.adam.lr), ..cfg.adam };
        let mut opt_m = AdamState::new(material_cfg, &[Array2::zeros((1, 1)), Array2::zeros((1, 1))])?;
        let weights = cfg.weights.clone();
        let feas = cfg.feasibility;
        let problem = cfg.working_problem(self.estimate);
        let offset = cfg.stage_transition;
        for i in 0..cfg.stage_b_epochs {
            let epoch = offset + i;
            let mut g = Graph::new();
            let pl = self.layer.params().bind(&mut g, true)?;
            let ps = self.substrate.params().bind(&mut g, false)?;
            let a = g.scalar_param(self.estimate.alpha)?;
            let k = g.scalar_param(self.estimate.kappa)?;
            let loss = stage_b_loss(
                &mut g,
                &Bound { model: &self.layer, params: &pl, plan: &self.layer_plan },
                &Bound { model: &self.substrate, params: &ps, plan: &self.sub_plan_b },
                a,
                k,
                &problem,
                &weights,
                &feas,
            )?;
            let b = loss.breakdown(&g);
            if !b.total.is_finite() {
                return self.diverged(epoch, b.total);
            }
            g.backward(loss.total)?;
            opt.step(self.layer.params_mut().values_mut(), &gradients(&g, &pl))?;
            let mut m = [Array2::from_elem((1, 1), self.estimate.alpha), Array2::from_elem((1, 1), self.estimate.kappa)];
            opt_m.step(&mut m, &[g.grad(a), g.grad(k)])?;
            self.estimate = project_estimate(MaterialEstimate::new(m[0][[0, 0]], m[1][[0, 0]]), &feas);
            if i % 100 == 0 {
                log::info!(
                    "stage B epoch {epoch}: total {:.4e}, alpha {:.4}, kappa {:.4}",
                    b.total,
                    self.estimate.alpha,
                    self.estimate.kappa
                );
            }
            self.push_epoch(epoch, Stage::B, b);
        }
        Ok(())
    }

    pub fn finish(mut self) -> InverseOutcome {
        self.record.wall_clock_s = self.started.elapsed().as_secs_f64();
        InverseOutcome { estimate: self.estimate, layer: self.layer, substrate: self.substrate, record: self.record }
    }
}

pub fn train_inverse_two_stage(cfg: &InverseConfig, measurements: &MeasurementSet) -> Result<InverseOutcome> {
    let mut t = InverseTrainer::new(cfg, measurements)?;
    t.run_stage_a()?;
    t.run_stage_b()?;
    Ok(t.finish())
}

/// Mean and spread of the final relative errors (percent) over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatistics {
    pub runs: usize,
    pub truth: MaterialEstimate,
    pub estimates: Vec<MaterialEstimate>,
    /// `[ᾱ, κ̄, ρ̄c̄]`.
    pub mean_error: [f64; 3],
    /// Sample standard deviation (n − 1).
    pub std_error: [f64; 3],
}

pub fn multi_seed_statistics(estimates: &[MaterialEstimate], truth: MaterialEstimate) -> Result<SeedStatistics> {
    if estimates.len() < 2 {
        return Err(Error::invalid("statistics need at least two runs"));
    }
    let n = estimates.len() as f64;
    let errs: Vec<[f64; 3]> = estimates.iter().map(|e| e.relative_errors(&truth)).collect();
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for q in 0..3 {
        mean[q] = errs.iter().map(|e| e[q]).sum::<f64>() / n;
        std[q] = (errs.iter().map(|e| (e[q] - mean[q]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    Ok(SeedStatistics { runs: estimates.len(), truth, estimates: estimates.to_vec(), mean_error: mean, std_error: std })
}
