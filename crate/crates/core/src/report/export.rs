use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::{ErrorReport, GlobalErrors, Provenance, Summary};
use crate::error::{Error, Result};
use crate::oracle::FieldGrid;

pub const REPORT_SCHEMA: &str = "htf-error-report";
pub const REPORT_VERSION: u32 = 1;

/// JSON form of an [`ErrorReport`]; grids go to CSV files alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub schema: String,
    pub version: u32,
    pub summary: Summary,
    pub global: GlobalErrors,
    /// RMSE over time per node, paired with the node positions.
    pub rmse_x: Vec<f64>,
    pub rmse: Vec<f64>,
    pub provenance: Provenance,
}

impl ReportJson {
    pub fn from_report(r: &ErrorReport) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            version: REPORT_VERSION,
            summary: r.summary.clone(),
            global: r.global.clone(),
            rmse_x: r.pointwise.l1.x().to_vec(),
            rmse: r.pointwise.rmse.clone(),
            provenance: r.provenance.clone(),
        }
    }

    /// Parses and checks the schema tag, version and array lengths.
    pub fn parse(s: &str) -> Result<Self> {
        let r: ReportJson = serde_json::from_str(s)?;
        if r.schema != REPORT_SCHEMA || r.version != REPORT_VERSION {
            return Err(Error::config(format!("unsupported report {} v{}", r.schema, r.version)));
        }
        let n = r.global.t.len();
        if r.global.l1.len() != n || r.global.l2.len() != n || r.rmse.len() != r.rmse_x.len() {
            return Err(Error::config("report arrays have inconsistent lengths"));
        }
        Ok(r)
    }
}

/// Long-format rows `x,t,value,series` for named fields on one grid.
pub fn series_csv(series: &[(&str, &FieldGrid)]) -> String {
    let mut s = String::from("x,t,value,series\n");
    for (name, g) in series {
        for (l, &t) in g.t().iter().enumerate() {
            for (n, &x) in g.x().iter().enumerate() {
                let _ = writeln!(s, "{x:.8e},{t:.8e},{:.8e},{name}", g.values()[[l, n]]);
            }
        }
    }
    s
}

/// Long-format time series `x,t,value,series` with an empty `x` column.
/// Undefined values are written as empty fields.
pub fn time_series_csv(series: &[(&str, &[f64], &[Option<f64>])]) -> String {
    let mut s = String::from("x,t,value,series\n");
    for (name, t, v) in series {
        for (t, v) in t.iter().zip(v.iter()) {
            let val = v.map(|v| format!("{v:.8e}")).unwrap_or_default();
            let _ = writeln!(s, ",{t:.8e},{val},{name}");
        }
    }
    s
}

fn write(path: PathBuf, body: String) -> Result<PathBuf> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `<stem>_report.json`, the pointwise grids, the RMSE profile, a
/// long-format series file with prediction, reference and both error
/// fields, and the global error curves. Returns the written paths.
pub fn export_report(report: &ErrorReport, prediction: &FieldGrid, reference: &FieldGrid, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let json = serde_json::to_string_pretty(&ReportJson::from_report(report))?;
    out.push(write(dir.join(format!("{stem}_report.json")), json)?);
    out.push(write(dir.join(format!("{stem}_prediction.csv")), prediction.to_csv())?);
    out.push(write(dir.join(format!("{stem}_reference.csv")), reference.to_csv())?);
    out.push(write(dir.join(format!("{stem}_l1.csv")), report.pointwise.l1.to_csv())?);
    out.push(write(dir.join(format!("{stem}_l2.csv")), report.pointwise.l2.to_csv())?);
    let mut rmse = String::from("x,rmse\n");
    for (x, r) in report.pointwise.l1.x().iter().zip(&report.pointwise.rmse) {
        let _ = writeln!(rmse, "{x:.8e},{r:.8e}");
    }
    out.push(write(dir.join(format!("{stem}_rmse.csv")), rmse)?);
    let series = series_csv(&[
        ("prediction", prediction),
        ("reference", reference),
        ("l1", &report.pointwise.l1),
        ("l2", &report.pointwise.l2),
    ]);
    out.push(write(dir.join(format!("{stem}_series.csv")), series)?);
    let g = &report.global;
    let curves = time_series_csv(&[("global_l1", &g.t, &g.l1), ("global_l2", &g.t, &g.l2)]);
    out.push(write(dir.join(format!("{stem}_global.csv")), curves)?);
    Ok(out)
}

/// Reads an `x,t,u` CSV written by [`FieldGrid::to_csv`] (any row order)
/// back into a grid.
pub fn read_field_csv(path: &Path) -> Result<FieldGrid> {
    let parse_err = |m: String| Error::Parse { path: path.into(), message: m };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| parse_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "x" || &headers[1] != "t" {
        return Err(parse_err(format!("expected header x,t,u, found {headers:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| parse_err(format!("row {}: column {} is not a number", i + 2, j + 1)))
        };
        rows.push((num(0)?, num(1)?, num(2)?));
    }
    let axis = |sel: fn(&(f64, f64, f64)) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(sel).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let xs = axis(|r| r.0);
    let ts = axis(|r| r.1);
    if xs.len() * ts.len() != rows.len() {
        return Err(parse_err(format!("{} rows do not form a {}x{} grid", rows.len(), xs.len(), ts.len())));
    }
    let mut values = Array2::from_elem((ts.len(), xs.len()), f64::NAN);
    for (x, t, u) in rows {
        let n = xs.binary_search_by(|v| v.total_cmp(&x)).expect("x is on the axis");
        let l = ts.binary_search_by(|v| v.total_cmp(&t)).expect("t is on the axis");
        values[[l, n]] = u;
    }
    FieldGrid::new(xs, ts, values, None).map_err(|e| parse_err(e.to_string()))
}
