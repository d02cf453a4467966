//! Error metrics against a reference field and result files.

mod export;
mod metrics;

pub use export::{export_report, read_field_csv, series_csv, time_series_csv, ReportJson, REPORT_SCHEMA, REPORT_VERSION};

pub use metrics::{global_errors, pointwise_errors, ErrorReport, GlobalErrors, PointwiseErrors, Provenance, Summary};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// SHA-256 (hex) of a config's JSON serialization.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let json = serde_json::to_string(cfg)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
