use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::FieldGrid;

/// Elementwise error fields between a prediction and a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseErrors {
    /// `|pred − ref|`.
    pub l1: FieldGrid,
    /// `(pred − ref)²`.
    pub l2: FieldGrid,
    /// Root mean square over time at each node.
    pub rmse: Vec<f64>,
}

fn same_grid(pred: &FieldGrid, reference: &FieldGrid) -> Result<()> {
    if pred.x() != reference.x() || pred.t() != reference.t() {
        return Err(Error::invalid(format!(
            "grids differ: prediction {}x{} vs reference {}x{} (nodes x levels)",
            pred.x().len(),
            pred.t().len(),
            reference.x().len(),
            reference.t().len()
        )));
    }
    Ok(())
}

pub fn pointwise_errors(pred: &FieldGrid, reference: &FieldGrid) -> Result<PointwiseErrors> {
    same_grid(pred, reference)?;
    let d = pred.values() - reference.values();
    let l1 = FieldGrid::new(pred.x().to_vec(), pred.t().to_vec(), d.mapv(f64::abs), None)?;
    let l2 = FieldGrid::new(pred.x().to_vec(), pred.t().to_vec(), d.mapv(|v| v * v), None)?;
    let levels = d.nrows() as f64;
    let rmse = l2.values().columns().into_iter().map(|c| (c.sum() / levels).sqrt()).collect();
    Ok(PointwiseErrors { l1, l2, rmse })
}

/// Reference-normalized errors per time level. A level whose reference is
/// identically zero has no defined ratio and is reported as `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalErrors {
    pub t: Vec<f64>,
    /// `Σ|pred − ref| / Σ|ref|`.
    pub l1: Vec<Option<f64>>,
    /// `‖pred − ref‖₂ / ‖ref‖₂`.
    pub l2: Vec<Option<f64>>,
}

impl GlobalErrors {
    pub fn mean_l1(&self) -> Option<f64> {
        mean_defined(&self.l1)
    }

    pub fn mean_l2(&self) -> Option<f64> {
        mean_defined(&self.l2)
    }

    pub fn max_l1(&self) -> Option<f64> {
        self.l1.iter().flatten().copied().reduce(f64::max)
    }

    pub fn undefined_levels(&self) -> usize {
        self.l1.iter().filter(|v| v.is_none()).count()
    }
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

pub fn global_errors(pred: &FieldGrid, reference: &FieldGrid) -> Result<GlobalErrors> {
    same_grid(pred, reference)?;
    let mut l1 = Vec::with_capacity(pred.t().len());
    let mut l2 = Vec::with_capacity(pred.t().len());
    for (p, r) in pred.values().rows().into_iter().zip(reference.values().rows()) {
        let abs_ref: f64 = r.iter().map(|v| v.abs()).sum();
        if abs_ref == 0.0 {
            l1.push(None);
            l2.push(None);
            continue;
        }
        let abs_err: f64 = p.iter().zip(r).map(|(a, b)| (a - b).abs()).sum();
        let sq_err: f64 = p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
        let sq_ref: f64 = r.iter().map(|v| v * v).sum();
        l1.push(Some(abs_err / abs_ref));
        l2.push(Some(sq_err.sqrt() / sq_ref.sqrt()));
    }
    Ok(GlobalErrors { t: pred.t().to_vec(), l1, l2 })
}

/// Where the numbers in a report came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of the resolved run config.
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub oracle_dx: Option<f64>,
    pub oracle_dt: Option<f64>,
    /// Label of the field used as reference (normalizer of global errors).
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max_pointwise_l1: f64,
    pub max_pointwise_l2: f64,
    pub mean_global_l1: Option<f64>,
    pub mean_global_l2: Option<f64>,
    pub max_global_l1: Option<f64>,
    pub undefined_levels: usize,
}

/// Pointwise and global comparison of two fields on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub pointwise: PointwiseErrors,
    pub global: GlobalErrors,
    pub summary: Summary,
    pub provenance: Provenance,
}

impl ErrorReport {
    pub fn compare(pred: &FieldGrid, reference: &FieldGrid, provenance: Provenance) -> Result<Self> {
        let pointwise = pointwise_errors(pred, reference)?;
        let global = global_errors(pred, reference)?;
        let summary = Summary {
            max_pointwise_l1: pointwise.l1.max_abs(),
            max_pointwise_l2: pointwise.l2.max_abs(),
            mean_global_l1: global.mean_l1(),
            mean_global_l2: global.mean_l2(),
            max_global_l1: global.max_l1(),
            undefined_levels: global.undefined_levels(),
        };
        Ok(Self { pointwise, global, summary, provenance })
    }
}
