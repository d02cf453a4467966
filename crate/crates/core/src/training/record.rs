use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::LossBreakdown;
use crate::report::{GlobalErrors, Summary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Forward,
    A,
    B,
}

/// Loss values recorded after one epoch (evaluated before that epoch's
/// update).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: LossBreakdown,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub alpha: f64,
    pub kappa: f64,
    pub rho_c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `forward` or `inverse`.
    pub kind: String,
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub seed: u64,
    pub losses: Vec<EpochLoss>,
    /// Material estimate after every epoch (inverse runs only).
    pub trajectory: Vec<TrajectoryPoint>,
    pub wall_clock_s: f64,
    pub status: RunStatus,
    pub summary: Option<Summary>,
    pub global_errors: Option<GlobalErrors>,
}

impl RunRecord {
    pub fn new(kind: &str, config: serde_json::Value, seed: u64) -> Self {
        Self {
            kind: kind.into(),
            config,
            seed,
            losses: Vec::new(),
            trajectory: Vec::new(),
            wall_clock_s: 0.0,
            status: RunStatus::Completed,
            summary: None,
            global_errors: None,
        }
    }

    pub fn epochs_run(&self) -> usize {
        self.losses.len()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.losses.iter().map(|e| e.loss.total).collect()
    }

    pub fn stage_totals(&self, stage: Stage) -> Vec<f64> {
        self.losses.iter().filter(|e| e.stage == stage).map(|e| e.loss.total).collect()
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long-format losses: `epoch,stage,term,raw,weighted`.
    pub fn losses_csv(&self) -> String {
        let mut s = String::from("epoch,stage,term,raw,weighted\n");
        for e in &self.losses {
            let stage = serde_json::to_value(e.stage).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            for t in &e.loss.terms {
                let _ = writeln!(s, "{},{stage},{},{:.8e},{:.8e}", e.epoch, t.name, t.raw, t.weighted);
            }
            let _ = writeln!(s, "{},{stage},total,{:.8e},{:.8e}", e.epoch, e.loss.total, e.loss.total);
        }
        s
    }

    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("epoch,alpha,kappa,rho_c\n");
        for p in &self.trajectory {
            let _ = writeln!(s, "{},{:.8e},{:.8e},{:.8e}", p.epoch, p.alpha, p.kappa, p.rho_c);
        }
        s
    }

    /// Writes `<stem>.json`, `<stem>_losses.csv` and, for inverse runs,
    /// `<stem>_trajectory.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: String, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put(format!("{stem}.json"), self.to_json()?)?;
        put(format!("{stem}_losses.csv"), self.losses_csv())?;
        if !self.trajectory.is_empty() {
            put(format!("{stem}_trajectory.csv"), self.trajectory_csv())?;
        }
        Ok(())
    }
}

/// Mean of the last `window` values against the mean of the first
/// `window`: `(start, end)`.
pub fn moving_average_ends(values: &[f64], window: usize) -> Option<(f64, f64)> {
    if window == 0 || values.len() < window {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..window]), mean(&values[values.len() - window..])))
}
