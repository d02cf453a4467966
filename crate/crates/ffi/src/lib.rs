//! C ABI over the oracle, the error metrics and the training drivers.
//!
//! Configurations cross the boundary as JSON strings in the same format
//! the `htf` command line reads. Results are returned through opaque
//! handles that the caller releases with the matching `*_free` function.
//! Every fallible call returns an [`HtfStatus`]; on failure the message is
//! available from [`htf_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use htf::oracle::{generate_inverse_dataset, solve_two_region, FieldGrid, InverseDataConfig, MeasurementSet, SolverConfig};
use htf::physics::DimensionlessProblem;
use htf::report::{ErrorReport, Provenance, Summary};
use htf::training::{train_forward, train_inverse_two_stage, ForwardConfig, ForwardOutcome, InverseConfig};
use htf::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Diverged = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Solved or predicted temperature field on a rectilinear grid.
pub struct HtfField(FieldGrid);

/// Noisy sensor readings.
pub struct HtfMeasurements(MeasurementSet);

/// A finished forward run.
pub struct HtfForwardRun(ForwardOutcome);

/// Headline numbers of a field comparison. Global means are NaN when no
/// reference level is nonzero.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HtfErrorSummary {
    pub max_pointwise_l1: f64,
    pub max_pointwise_l2: f64,
    pub mean_global_l1: f64,
    pub mean_global_l2: f64,
    pub undefined_levels: usize,
}

impl From<&Summary> for HtfErrorSummary {
    fn from(s: &Summary) -> Self {
        Self {
            max_pointwise_l1: s.max_pointwise_l1,
            max_pointwise_l2: s.max_pointwise_l2,
            mean_global_l1: s.mean_global_l1.unwrap_or(f64::NAN),
            mean_global_l2: s.mean_global_l2.unwrap_or(f64::NAN),
            undefined_levels: s.undefined_levels,
        }
    }
}

/// Identified layer properties.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HtfEstimate {
    pub alpha: f64,
    pub kappa: f64,
    pub rho_c: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(HtfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Json(_) | Error::Parse { .. } => HtfStatus::Config,
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => HtfStatus::InvalidArgument,
            Error::NonFinite(_) | Error::Solver(_) | Error::NotScalar(_) | Error::ForeignValue => HtfStatus::Numerical,
            Error::Diverged { .. } => HtfStatus::Diverged,
            Error::Io { .. } => HtfStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(HtfStatus::Config, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HtfStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HtfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HtfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            HtfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(HtfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_json<T: serde::de::DeserializeOwned + Default>(p: *const c_char, what: &str) -> Result<T, Failure> {
    if p.is_null() {
        Ok(T::default())
    } else {
        Ok(serde_json::from_str(str_arg(p, what)?)?)
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn fill(dst: *mut f64, len: usize, src: impl ExactSizeIterator<Item = f64>, what: &str) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(HtfStatus::BufferTooSmall, format!("{what} needs {} entries, got {len}", src.len())));
    }
    if dst.is_null() {
        return Err(null(what));
    }
    for (i, v) in src.enumerate() {
        *dst.add(i) = v;
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn htf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn htf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Solves a two-region problem with the finite-difference oracle.
/// `solver_json` may be null for the default solver settings.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_oracle_solve(problem_json: *const c_char, solver_json: *const c_char, out_field: *mut *mut HtfField) -> HtfStatus {
    guard(|| {
        let out_field = out(out_field, "out_field")?;
        let problem: DimensionlessProblem = serde_json::from_str(str_arg(problem_json, "problem_json")?)?;
        let solver: SolverConfig = opt_json(solver_json, "solver_json")?;
        let field = solve_two_region(&problem, &solver)?;
        *out_field = Box::into_raw(Box::new(HtfField(field)));
        Ok(())
    })
}

/// Number of spatial nodes and stored time levels.
///
/// # Safety
/// `field` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_field_shape(field: *const HtfField, nx: *mut usize, nt: *mut usize) -> HtfStatus {
    guard(|| {
        let f = &obj(field, "field")?.0;
        *out(nx, "nx")? = f.x().len();
        *out(nt, "nt")? = f.t().len();
        Ok(())
    })
}

/// Copies the node positions and level times.
///
/// # Safety
/// `x` and `t` must hold at least `nx` and `nt` doubles.
#[no_mangle]
pub unsafe extern "C" fn htf_field_axes(field: *const HtfField, x: *mut f64, nx: usize, t: *mut f64, nt: usize) -> HtfStatus {
    guard(|| {
        let f = &obj(field, "field")?.0;
        fill(x, nx, f.x().iter().copied(), "x")?;
        fill(t, nt, f.t().iter().copied(), "t")
    })
}

/// Copies the values level by level (`values[level * nx + node]`).
///
/// # Safety
/// `values` must hold at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn htf_field_values(field: *const HtfField, values: *mut f64, len: usize) -> HtfStatus {
    guard(|| {
        let f = &obj(field, "field")?.0;
        fill(values, len, f.values().iter().copied(), "values")
    })
}

/// Bilinear interpolation of the field at `(x, t)`.
///
/// # Safety
/// `field` must come from this library; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_field_value_at(field: *const HtfField, x: f64, t: f64, value: *mut f64) -> HtfStatus {
    guard(|| {
        let f = &obj(field, "field")?.0;
        *out(value, "value")? = f.value_at(x, t)?;
        Ok(())
    })
}

/// # Safety
/// `field` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn htf_field_free(field: *mut HtfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Compares a prediction with a reference on the same grid.
///
/// # Safety
/// Both fields must come from this library; `summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_compare(prediction: *const HtfField, reference: *const HtfField, summary: *mut HtfErrorSummary) -> HtfStatus {
    guard(|| {
        let p = &obj(prediction, "prediction")?.0;
        let r = &obj(reference, "reference")?.0;
        let rep = ErrorReport::compare(p, r, Provenance::default())?;
        *out(summary, "summary")? = HtfErrorSummary::from(&rep.summary);
        Ok(())
    })
}

/// Synthetic sensor data for the identification scenario. `data_json`
/// may be null for the default sensor layout and noise level.
///
/// # Safety
/// `data_json` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_generate_measurements(
    alpha: f64,
    kappa: f64,
    seed: u64,
    data_json: *const c_char,
    out_set: *mut *mut HtfMeasurements,
) -> HtfStatus {
    guard(|| {
        let out_set = out(out_set, "out_set")?;
        let cfg: InverseDataConfig = opt_json(data_json, "data_json")?;
        let set = generate_inverse_dataset(alpha, kappa, seed, &cfg)?;
        *out_set = Box::into_raw(Box::new(HtfMeasurements(set)));
        Ok(())
    })
}

/// Builds a measurement set from caller arrays of length `len`.
///
/// # Safety
/// `x`, `t` and `u` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn htf_measurements_new(x: *const f64, t: *const f64, u: *const f64, len: usize, out_set: *mut *mut HtfMeasurements) -> HtfStatus {
    guard(|| {
        let out_set = out(out_set, "out_set")?;
        if x.is_null() || t.is_null() || u.is_null() {
            return Err(null("measurement array"));
        }
        let (x, t, u) = (std::slice::from_raw_parts(x, len), std::slice::from_raw_parts(t, len), std::slice::from_raw_parts(u, len));
        let entries = (0..len).map(|i| htf::oracle::Measurement { x: x[i], t: t[i], u: u[i] }).collect();
        let set = MeasurementSet { entries, sigma: 0.0, scale: htf::oracle::NoiseScale::Absolute, seed: None, truth: None };
        *out_set = Box::into_raw(Box::new(HtfMeasurements(set)));
        Ok(())
    })
}

/// # Safety
/// `set` must come from this library; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_measurements_len(set: *const HtfMeasurements, len: *mut usize) -> HtfStatus {
    guard(|| {
        *out(len, "len")? = obj(set, "set")?.0.len();
        Ok(())
    })
}

/// Copies the readings into three caller arrays.
///
/// # Safety
/// `x`, `t` and `u` must each hold at least `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn htf_measurements_copy(set: *const HtfMeasurements, x: *mut f64, t: *mut f64, u: *mut f64, len: usize) -> HtfStatus {
    guard(|| {
        let e = &obj(set, "set")?.0.entries;
        fill(x, len, e.iter().map(|m| m.x), "x")?;
        fill(t, len, e.iter().map(|m| m.t), "t")?;
        fill(u, len, e.iter().map(|m| m.u), "u")
    })
}

/// # Safety
/// `set` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn htf_measurements_free(set: *mut HtfMeasurements) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Trains the forward model from a JSON forward configuration.
///
/// # Safety
/// `config_json` must be NUL-terminated; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_train_forward(config_json: *const c_char, out_run: *mut *mut HtfForwardRun) -> HtfStatus {
    guard(|| {
        let out_run = out(out_run, "out_run")?;
        let cfg: ForwardConfig = serde_json::from_str(str_arg(config_json, "config_json")?)?;
        let run = train_forward(&cfg)?;
        *out_run = Box::into_raw(Box::new(HtfForwardRun(run)));
        Ok(())
    })
}

/// Error summary of a forward run against its oracle reference.
///
/// # Safety
/// `run` must come from this library; `summary` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_forward_summary(run: *const HtfForwardRun, summary: *mut HtfErrorSummary) -> HtfStatus {
    guard(|| {
        *out(summary, "summary")? = HtfErrorSummary::from(&obj(run, "run")?.0.report.summary);
        Ok(())
    })
}

/// Number of completed epochs, less than configured if training diverged.
///
/// # Safety
/// `run` must come from this library; `epochs` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_forward_epochs(run: *const HtfForwardRun, epochs: *mut usize) -> HtfStatus {
    guard(|| {
        *out(epochs, "epochs")? = obj(run, "run")?.0.record.epochs_run();
        Ok(())
    })
}

/// New handle to the predicted field on the evaluation grid.
///
/// # Safety
/// `run` must come from this library; `out_field` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_forward_prediction(run: *const HtfForwardRun, out_field: *mut *mut HtfField) -> HtfStatus {
    guard(|| {
        let out_field = out(out_field, "out_field")?;
        *out_field = Box::into_raw(Box::new(HtfField(obj(run, "run")?.0.prediction.clone())));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn htf_forward_free(run: *mut HtfForwardRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Two-stage identification of the layer properties from measurements.
///
/// # Safety
/// `config_json` must be NUL-terminated; `set` must come from this
/// library; `estimate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn htf_train_inverse(config_json: *const c_char, set: *const HtfMeasurements, estimate: *mut HtfEstimate) -> HtfStatus {
    guard(|| {
        let estimate = out(estimate, "estimate")?;
        let cfg: InverseConfig = serde_json::from_str(str_arg(config_json, "config_json")?)?;
        let run = train_inverse_two_stage(&cfg, &obj(set, "set")?.0)?;
        let e = run.estimate;
        *estimate = HtfEstimate { alpha: e.alpha, kappa: e.kappa, rho_c: e.rho_c() };
        Ok(())
    })
}
