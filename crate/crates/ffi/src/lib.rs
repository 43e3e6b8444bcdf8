//! C ABI for the formsim engine.
//!
//! Scenarios and runs are opaque handles created and destroyed by this
//! library. Every fallible call returns an [`FsStatus`]; on failure the
//! message is available from [`formsim_last_error`] on the same thread until
//! the next failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use formsim::engine::{RunOutput, Scheme};
use formsim::output::{self, ColumnLayout};
use formsim::scenario::{self, Overrides, Scenario, SignKind};
use formsim::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument value, dimension or graph.
    InvalidArgument = 2,
    /// Malformed scenario text or unknown schema version.
    Schema = 3,
    /// A hypothesis of the selected controller does not hold.
    Hypothesis = 4,
    Unsupported = 5,
    Numerical = 6,
    /// The integration produced a non-finite state.
    Blowup = 7,
    Io = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsSignMode {
    Strict = 0,
    Hysteresis = 1,
    Smooth = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsScheme {
    Euler = 0,
    Rk4 = 1,
}

/// Final-time figures of a run. Quantities the controller mode lacks are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsSummary {
    pub z_tilde_inf: f64,
    pub xi_inf: f64,
    pub eta_tilde_inf: f64,
    pub theta_tilde_final: f64,
    pub xi_tilde_inf: f64,
    pub v_initial: f64,
    pub v_final: f64,
    pub flips_total: u64,
    pub lyapunov_passed: bool,
    pub passivity_passed: bool,
}

/// Opaque scenario handle.
pub struct FsScenario(Scenario);

/// Opaque handle to a finished run.
pub struct FsRun {
    out: RunOutput,
    layout: ColumnLayout,
    p: usize,
    name: String,
    headers: Vec<CString>,
    summary_json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Schema(_) => FsStatus::Schema,
            Error::Hypothesis { .. } => FsStatus::Hypothesis,
            Error::InvalidGraph(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidParameter { .. }
            | Error::AgentRejected(_)
            | Error::Missing(_) => FsStatus::InvalidArgument,
            Error::Unsupported(_) => FsStatus::Unsupported,
            Error::Numerical(_) => FsStatus::Numerical,
            Error::IntegrationBlowup { .. } => FsStatus::Blowup,
            Error::Io { .. } | Error::Csv(_) => FsStatus::Io,
            Error::Other(_) => FsStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(FsStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn scenario_mut<'a>(s: *mut FsScenario) -> Result<&'a mut Scenario, Failure> {
    s.as_mut().map(|s| &mut s.0).ok_or_else(|| null("scenario"))
}

unsafe fn run_ref<'a>(r: *const FsRun) -> Result<&'a FsRun, Failure> {
    r.as_ref().ok_or_else(|| null("run"))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn boxed_scenario(sc: Scenario, out: *mut *mut FsScenario) -> Result<(), Failure> {
    unsafe { put(out, Box::into_raw(Box::new(FsScenario(sc))), "out") }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn formsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL. Valid until
/// the next failing call on this thread.
#[no_mangle]
pub extern "C" fn formsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a scenario from JSON text.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_from_json(
    json: *const c_char,
    out: *mut *mut FsScenario,
) -> FsStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        boxed_scenario(Scenario::from_json_str(text)?, out)
    })
}

/// Loads a bundled preset by name (see `formsim presets list`).
///
/// # Safety
/// `name` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_from_preset(
    name: *const c_char,
    out: *mut *mut FsScenario,
) -> FsStatus {
    guard(|| boxed_scenario(scenario::preset(str_arg(name, "name")?)?, out))
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_from_file(
    path: *const c_char,
    out: *mut *mut FsScenario,
) -> FsStatus {
    guard(|| boxed_scenario(Scenario::from_path(str_arg(path, "path")?)?, out))
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_free(s: *mut FsScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_n_agents(s: *mut FsScenario, out: *mut usize) -> FsStatus {
    guard(|| put(out, scenario_mut(s)?.n_agents(), "out"))
}

/// Applies an override and revalidates; the scenario is unchanged on failure.
unsafe fn override_with(s: *mut FsScenario, f: impl FnOnce(&mut Scenario)) -> FsStatus {
    guard(|| {
        let sc = scenario_mut(s)?;
        let mut next = sc.clone();
        f(&mut next);
        next.validate()?;
        *sc = next;
        Ok(())
    })
}

/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_set_dt(s: *mut FsScenario, dt: f64) -> FsStatus {
    override_with(s, |sc| {
        sc.apply_overrides(&Overrides {
            dt: Some(dt),
            ..Default::default()
        })
    })
}

/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_set_t_final(s: *mut FsScenario, t_final: f64) -> FsStatus {
    override_with(s, |sc| {
        sc.apply_overrides(&Overrides {
            t_final: Some(t_final),
            ..Default::default()
        })
    })
}

/// Sets the sign selection; `eps` is the width of the regularized modes and
/// is ignored for the strict mode.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_set_sign_mode(
    s: *mut FsScenario,
    mode: FsSignMode,
    eps: f64,
) -> FsStatus {
    let kind = match mode {
        FsSignMode::Strict => SignKind::Strict,
        FsSignMode::Hysteresis => SignKind::Hysteresis,
        FsSignMode::Smooth => SignKind::Smooth,
    };
    let eps = (mode != FsSignMode::Strict).then_some(eps);
    override_with(s, |sc| {
        sc.apply_overrides(&Overrides {
            sign_mode: Some(kind),
            eps,
            ..Default::default()
        })
    })
}

/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_set_scheme(s: *mut FsScenario, scheme: FsScheme) -> FsStatus {
    let scheme = match scheme {
        FsScheme::Euler => Scheme::Euler,
        FsScheme::Rk4 => Scheme::Rk4,
    };
    override_with(s, |sc| {
        sc.apply_overrides(&Overrides {
            scheme: Some(scheme),
            ..Default::default()
        })
    })
}

/// Keeps every `stride`-th step in the run's records.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_set_output_stride(s: *mut FsScenario, stride: usize) -> FsStatus {
    override_with(s, |sc| sc.integration.output_stride = stride)
}

/// Scenario as pretty JSON; release with [`formsim_string_free`]. NULL on
/// failure.
///
/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn formsim_scenario_to_json(s: *mut FsScenario) -> *mut c_char {
    let mut text = ptr::null_mut();
    let status = guard(|| {
        let json = scenario_mut(s)?.to_json_pretty();
        text = CString::new(json).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    });
    if status == FsStatus::Ok {
        text
    } else {
        ptr::null_mut()
    }
}

/// # Safety
/// `text` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn formsim_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Integrates a scenario.
///
/// # Safety
/// `s` must be a live scenario handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_run(s: *mut FsScenario, out: *mut *mut FsRun) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sc = scenario_mut(s)?;
        let prepared = sc.prepare()?;
        let run = prepared.run()?;
        let layout = ColumnLayout::from_closed_loop(&prepared.closed_loop);
        let headers = layout
            .headers()
            .into_iter()
            .map(|h| CString::new(h).expect("column names have no NUL"))
            .collect();
        let json = serde_json::to_string_pretty(&run.summary)
            .map_err(|e| Failure(FsStatus::Other, e.to_string()))?;
        let handle = FsRun {
            out: run,
            layout,
            p: sc.p,
            name: sc.name.clone().unwrap_or_else(|| "scenario".into()),
            headers,
            summary_json: CString::new(json).expect("JSON has no NUL"),
        };
        put(out, Box::into_raw(Box::new(handle)), "out")
    })
}

/// # Safety
/// `r` must come from this library and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_free(r: *mut FsRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_summary(r: *const FsRun, out: *mut FsSummary) -> FsStatus {
    guard(|| {
        let s = &run_ref(r)?.out.summary;
        let nan = f64::NAN;
        let summary = FsSummary {
            z_tilde_inf: s.z_tilde_inf,
            xi_inf: s.xi_inf,
            eta_tilde_inf: s.eta_tilde_inf.unwrap_or(nan),
            theta_tilde_final: s.theta_tilde_final.unwrap_or(nan),
            xi_tilde_inf: s.xi_tilde_inf.unwrap_or(nan),
            v_initial: s.v_initial,
            v_final: s.v_final,
            flips_total: s.flips_total,
            lyapunov_passed: s.lyapunov.passed,
            passivity_passed: s.passivity_passed,
        };
        put(out, summary, "out")
    })
}

/// Full run summary as JSON, owned by the run handle. NULL if `r` is NULL.
///
/// # Safety
/// `r` must be a live run handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_summary_json(r: *const FsRun) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.summary_json.as_ptr())
}

/// # Safety
/// `r` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_n_records(r: *const FsRun, out: *mut usize) -> FsStatus {
    guard(|| put(out, run_ref(r)?.out.records.len(), "out"))
}

/// Number of columns of a record row (same as the trajectory CSV).
///
/// # Safety
/// `r` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_n_columns(r: *const FsRun, out: *mut usize) -> FsStatus {
    guard(|| put(out, run_ref(r)?.headers.len(), "out"))
}

/// Name of column `index`, owned by the run handle; NULL if out of range.
///
/// # Safety
/// `r` must be a live run handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_column_name(r: *const FsRun, index: usize) -> *const c_char {
    r.as_ref()
        .and_then(|r| r.headers.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Copies record `index` into `buf`, which must hold exactly
/// `formsim_run_n_columns` values.
///
/// # Safety
/// `r` must be a live run handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_row(
    r: *const FsRun,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> FsStatus {
    guard(|| {
        let run = run_ref(r)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let rec = run.out.records.get(index).ok_or_else(|| {
            invalid(format!(
                "record {index} out of range ({} records)",
                run.out.records.len()
            ))
        })?;
        if len != run.headers.len() {
            return Err(invalid(format!(
                "buffer holds {len} values, a row has {}",
                run.headers.len()
            )));
        }
        let row = run.layout.values(rec)?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&row);
        Ok(())
    })
}

/// Writes `trajectory.csv`, `positions.csv` and `summary.json` into `dir`.
///
/// # Safety
/// `r` must be a live run handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn formsim_run_write(r: *const FsRun, dir: *const c_char) -> FsStatus {
    guard(|| {
        let run = run_ref(r)?;
        let dir = Path::new(str_arg(dir, "dir")?);
        output::write_csv(&run.out.records, &run.layout, dir.join("trajectory.csv"))?;
        output::write_positions(&run.out.records, run.p, dir.join("positions.csv"))?;
        let path = dir.join("summary.json");
        let mut summary =
            serde_json::to_value(&run.out.summary).map_err(|e| Failure(FsStatus::Other, e.to_string()))?;
        summary["scenario"] = run.name.clone().into();
        let text =
            serde_json::to_string_pretty(&summary).map_err(|e| Failure(FsStatus::Other, e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(())
    })
}
