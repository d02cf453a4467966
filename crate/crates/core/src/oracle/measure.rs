use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{solve_two_region, FieldGrid, SolverConfig};
use crate::error::{Error, Result};
use crate::physics::{DimensionlessProblem, Feasibility, MaterialEstimate, INTERFACE};

pub const SENSOR_POSITIONS: [f64; 6] = [1.05, 1.1, 1.5, 2.0, 3.0, 4.0];
pub const NOISE_SIGMA: f64 = 0.01;

/// Sampling times `j·t̄_max/n`, `j = 1..=n`.
pub fn sensor_times(n: usize, t_max: f64) -> Vec<f64> {
    (1..=n).map(|j| j as f64 * t_max / n as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub x: f64,
    pub t: f64,
    pub u: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseScale {
    /// `ε ~ N(0, σ²)`.
    #[default]
    Absolute,
    /// `ε ~ N(0, (σ·|ū|)²)`.
    Relative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub entries: Vec<Measurement>,
    pub sigma: f64,
    #[serde(default)]
    pub scale: NoiseScale,
    pub seed: Option<u64>,
    /// Properties used to generate the data, when synthetic.
    pub truth: Option<MaterialEstimate>,
}

/// JSON sidecar written next to the measurement CSV.
#[derive(Serialize)]
struct Sidecar<'a> {
    sigma: f64,
    scale: NoiseScale,
    seed: Option<u64>,
    truth: Option<&'a MaterialEstimate>,
    count: usize,
}

impl MeasurementSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Triples `(x̄, t̄, ū)` as consumed by the sensor loss.
    pub fn triples(&self) -> Vec<(f64, f64, f64)> {
        self.entries.iter().map(|m| (m.x, m.t, m.u)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,t,u_measured\n");
        for m in &self.entries {
            let _ = writeln!(s, "{:.8e},{:.8e},{:.8e}", m.x, m.t, m.u);
        }
        s
    }

    /// Writes `path` (CSV) and `path` with a `.json` extension (sidecar).
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let side = path.with_extension("json");
        let body = serde_json::to_string_pretty(&Sidecar {
            sigma: self.sigma,
            scale: self.scale,
            seed: self.seed,
            truth: self.truth.as_ref(),
            count: self.len(),
        })?;
        std::fs::write(&side, body).map_err(|e| Error::io(&side, e))
    }
}

/// Noiseless readings: linear interpolation in space at stored time levels.
pub fn sample_sensors(field: &FieldGrid, positions: &[f64], times: &[f64]) -> Result<MeasurementSet> {
    if let Some(&x) = positions.iter().find(|&&x| x <= INTERFACE) {
        return Err(Error::invalid(format!("sensor at {x} is not on the substrate side")));
    }
    let mut entries = Vec::with_capacity(positions.len() * times.len());
    for &x in positions {
        for &t in times {
            let l = field.level_index(t).ok_or_else(|| Error::invalid(format!("time {t} is not a stored level")))?;
            entries.push(Measurement { x, t, u: field.interpolate_x(l, x)? });
        }
    }
    Ok(MeasurementSet { entries, sigma: 0.0, scale: NoiseScale::Absolute, seed: None, truth: None })
}

pub fn add_noise(set: &MeasurementSet, sigma: f64, seed: u64) -> Result<MeasurementSet> {
    add_noise_scaled(set, sigma, NoiseScale::Absolute, seed)
}

/// Adds independent zero-mean Gaussian noise per entry.
pub fn add_noise_scaled(set: &MeasurementSet, sigma: f64, scale: NoiseScale, seed: u64) -> Result<MeasurementSet> {
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("noise level {sigma} must be non-negative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = set
        .entries
        .iter()
        .map(|m| {
            let s = match scale {
                NoiseScale::Absolute => sigma,
                NoiseScale::Relative => sigma * m.u.abs(),
            };
            let z: f64 = normal.sample(&mut rng);
            Measurement { u: m.u + s * z, ..*m }
        })
        .collect();
    Ok(MeasurementSet { entries, sigma, scale, seed: Some(seed), truth: set.truth })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseDataConfig {
    pub positions: Vec<f64>,
    pub time_points: usize,
    pub sigma: f64,
    #[serde(default)]
    pub scale: NoiseScale,
    pub solver: SolverConfig,
}

impl Default for InverseDataConfig {
    fn default() -> Self {
        Self {
            positions: SENSOR_POSITIONS.to_vec(),
            time_points: 20,
            sigma: NOISE_SIGMA,
            scale: NoiseScale::Absolute,
            solver: SolverConfig::default(),
        }
    }
}

/// The clean field behind the synthetic identification data.
pub fn inverse_truth_field(alpha: f64, kappa: f64, cfg: &InverseDataConfig) -> Result<FieldGrid> {
    let truth = MaterialEstimate::new(alpha, kappa);
    if !truth.in_box(&Feasibility::default()) {
        return Err(Error::invalid(format!("true properties ({alpha}, {kappa}) outside the feasibility box")));
    }
    let problem = DimensionlessProblem::inverse(alpha, kappa);
    // Store exactly the sensor times whenever the time step divides them.
    let mut solver = cfg.solver.clone();
    let spacing = problem.t_max / cfg.time_points.max(1) as f64;
    let ratio = spacing / solver.dt;
    if ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9 {
        solver.save_every = ratio.round() as usize;
    }
    solve_two_region(&problem, &solver)
}

/// Solves the heating scenario with the given layer, samples the sensor
/// layout and corrupts the readings.
pub fn generate_inverse_dataset(alpha: f64, kappa: f64, seed: u64, cfg: &InverseDataConfig) -> Result<MeasurementSet> {
    let field = inverse_truth_field(alpha, kappa, cfg)?;
    let times = sensor_times(cfg.time_points, field.problem().map_or(1.0, |p| p.t_max));
    let mut clean = sample_sensors(&field, &cfg.positions, &times)?;
    clean.truth = Some(MaterialEstimate::new(alpha, kappa));
    add_noise_scaled(&clean, cfg.sigma, cfg.scale, seed)
}
