//! C interface to the lgmjoint engine.
//!
//! Handles are opaque and owned by the caller: every `LgmFit*` obtained from
//! `lgm_fit` or `lgm_fit_load` must be released with `lgm_fit_free`, and every
//! string written to an `out` parameter with `lgm_string_free`. Functions
//! return an [`LgmStatus`]; on failure `lgm_last_error` gives a message that
//! stays valid until the next call on the same thread. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lgmjoint::archive;
use lgmjoint::assembly::Model;
use lgmjoint::data::Table;
use lgmjoint::inference::{fit, Fit};
use lgmjoint::predict::{predict, PredictRequest};
use lgmjoint::spec::{parse_config, IntStrategy};
use lgmjoint::summaries::{summarize, SummaryOptions};
use lgmjoint::verify;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad input: unreadable file, malformed config or data, unknown name.
    Validation = 3,
    /// Numerical failure: non-convergence, indefinite Hessian, non-finite values.
    Numerical = 4,
    /// Requested element does not exist.
    NotFound = 5,
    /// Internal error (a caught panic).
    Internal = 6,
}

/// How the hyperparameter posterior is explored.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgmStrategy {
    /// Use the strategy named in the configuration.
    FromConfig = 0,
    /// Empirical Bayes: a single point at the mode.
    Eb = 1,
    /// Grid over standardized hyperparameter space.
    Grid = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgmFormat {
    Json = 0,
    Text = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgmSummaryOptions {
    /// Random effects as standard deviations and correlations.
    pub sdcor: bool,
    /// Fixed survival effects as hazard ratios.
    pub hr: bool,
    pub n_transform: usize,
    pub n_criteria: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgmPredictOptions {
    pub horizon: f64,
    pub n_time_points: usize,
    pub n_sample: usize,
    pub n_sample_re: usize,
    pub inv_link: bool,
    pub survival: bool,
    pub cif: bool,
    /// Start of survival prediction; negative means the last observed time.
    pub csurv: f64,
    pub seed: u64,
}

/// A fitted model.
pub struct LgmFit {
    model: Model,
    fit: Fit,
    names: Vec<CString>,
}

enum Failure {
    Status(LgmStatus, String),
    Engine(lgmjoint::Error),
}

impl From<lgmjoint::Error> for Failure {
    fn from(e: lgmjoint::Error) -> Self {
        Failure::Engine(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LgmStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LgmStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(&msg);
            s
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(&e.to_string());
            if e.is_validation() {
                LgmStatus::Validation
            } else {
                LgmStatus::Numerical
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            LgmStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(LgmStatus::NullArgument, format!("{what} is null"))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::Status(LgmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    opt_str(p, what)?.ok_or_else(|| null(what))
}

unsafe fn handle<'a>(h: *const LgmFit) -> Result<&'a LgmFit, Failure> {
    h.as_ref().ok_or_else(|| null("fit handle"))
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Status(LgmStatus::Internal, "output contains a NUL byte".into()))
}

unsafe fn write_out<T>(out: *mut T, v: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

fn wrap(model: Model, fit: Fit) -> Box<LgmFit> {
    let names = model
        .layout
        .names
        .iter()
        .map(|n| CString::new(n.as_str()).expect("latent names have no NUL"))
        .collect();
    Box::new(LgmFit { model, fit, names })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lgm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread ("" after a success).
#[no_mangle]
pub extern "C" fn lgm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned through an `out` parameter. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lgm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits a model. `config` is the JSON model description; `long_csv` and
/// `surv_csv` are CSV contents (not paths) and may be null.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit(
    config: *const c_char,
    long_csv: *const c_char,
    surv_csv: *const c_char,
    strategy: LgmStrategy,
    out: *mut *mut LgmFit,
) -> LgmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let config = req_str(config, "config")?;
        let long = opt_str(long_csv, "long_csv")?.map(Table::from_csv_str).transpose()?;
        let surv = opt_str(surv_csv, "surv_csv")?.map(Table::from_csv_str).transpose()?;
        let mut spec = parse_config(config, long.as_ref(), surv.as_ref())?;
        match strategy {
            LgmStrategy::FromConfig => {}
            LgmStrategy::Eb => spec.controls.int_strategy = IntStrategy::Eb,
            LgmStrategy::Grid => spec.controls.int_strategy = IntStrategy::Grid,
        }
        let model = Model::build(&spec, long.as_ref(), surv.as_ref())?;
        let f = fit(&model, spec.controls.int_strategy)?;
        out.write(Box::into_raw(wrap(model, f)));
        Ok(())
    })
}

/// Reads a fit archive directory.
///
/// # Safety
/// `dir` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_load(dir: *const c_char, out: *mut *mut LgmFit) -> LgmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let (model, f) = archive::load(Path::new(req_str(dir, "dir")?))?;
        out.write(Box::into_raw(wrap(model, f)));
        Ok(())
    })
}

/// Writes a fit archive directory, creating it if needed.
///
/// # Safety
/// `h` is a live handle; `dir` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_save(h: *const LgmFit, dir: *const c_char) -> LgmStatus {
    guard(|| {
        let h = handle(h)?;
        archive::save(Path::new(req_str(dir, "dir")?), &h.model, &h.fit)?;
        Ok(())
    })
}

/// Releases a fit handle. Null is ignored.
///
/// # Safety
/// `h` is null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_free(h: *mut LgmFit) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of latent elements (fixed effects, random effects, baselines).
///
/// # Safety
/// `h` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_n_latent(h: *const LgmFit) -> usize {
    h.as_ref().map_or(0, |h| h.names.len())
}

/// Name of latent element `i`, owned by the handle; null when out of range.
///
/// # Safety
/// `h` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_latent_name(h: *const LgmFit, i: usize) -> *const c_char {
    h.as_ref()
        .and_then(|h| h.names.get(i))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Posterior mean, sd and 95% interval of a latent element or free
/// hyperparameter (internal scale) by name. Any output pointer may be null.
///
/// # Safety
/// `h` is a live handle; `name` is NUL-terminated; outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_marginal(
    h: *const LgmFit,
    name: *const c_char,
    mean: *mut f64,
    sd: *mut f64,
    q025: *mut f64,
    q975: *mut f64,
) -> LgmStatus {
    guard(|| {
        let h = handle(h)?;
        let name = req_str(name, "name")?;
        let (m, s, lo, hi) = if let Some(i) = h.model.layout.names.iter().position(|n| n == name) {
            let mg = &h.fit.marginals[i];
            (mg.mean(), mg.sd(), mg.quantile(0.025), mg.quantile(0.975))
        } else if let Some(j) = h.model.hyper.free_names().iter().position(|n| n == name) {
            let (mu, cov) = h.fit.hyper_moments();
            let s = cov[(j, j)].sqrt();
            (mu[j], s, mu[j] - 1.959963984540054 * s, mu[j] + 1.959963984540054 * s)
        } else {
            return Err(Failure::Status(LgmStatus::NotFound, format!("no parameter named '{name}'")));
        };
        for (p, v) in [(mean, m), (sd, s), (q025, lo), (q975, hi)] {
            if !p.is_null() {
                p.write(v);
            }
        }
        Ok(())
    })
}

/// Default summary options.
#[no_mangle]
pub extern "C" fn lgm_summary_options_default() -> LgmSummaryOptions {
    let d = SummaryOptions::default();
    LgmSummaryOptions {
        sdcor: d.sdcor,
        hr: d.hr,
        n_transform: d.n_transform,
        n_criteria: d.n_criteria,
        seed: d.seed,
    }
}

/// Posterior summary as JSON or text. `opts` may be null for defaults.
///
/// # Safety
/// `h` is a live handle; `opts` is null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_fit_summary(
    h: *const LgmFit,
    opts: *const LgmSummaryOptions,
    format: LgmFormat,
    out: *mut *mut c_char,
) -> LgmStatus {
    guard(|| {
        let h = handle(h)?;
        let o = opts.as_ref().copied().unwrap_or_else(|| lgm_summary_options_default());
        let s = summarize(
            &h.model,
            &h.fit,
            &SummaryOptions {
                sdcor: o.sdcor,
                hr: o.hr,
                n_transform: o.n_transform,
                n_criteria: o.n_criteria,
                seed: o.seed,
            },
        );
        let text = match format {
            LgmFormat::Json => s.to_json(),
            LgmFormat::Text => s.to_text(),
        };
        write_out(out, to_c(text)?)
    })
}

/// Default prediction options up to `horizon`.
#[no_mangle]
pub extern "C" fn lgm_predict_options_default(horizon: f64) -> LgmPredictOptions {
    let d = PredictRequest::new(horizon);
    LgmPredictOptions {
        horizon,
        n_time_points: d.n_time_points,
        n_sample: d.n_sample,
        n_sample_re: d.n_sample_re,
        inv_link: d.inv_link,
        survival: d.survival,
        cif: d.cif,
        csurv: -1.0,
        seed: d.seed,
    }
}

/// Predictions for the subjects in `newdata_csv` (CSV contents). Writes the
/// longitudinal and survival tables as CSV; either output pointer may be
/// null to skip it.
///
/// # Safety
/// `h` is a live handle; `newdata_csv` is NUL-terminated; `opts` is valid;
/// outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_predict(
    h: *const LgmFit,
    newdata_csv: *const c_char,
    opts: *const LgmPredictOptions,
    out_long: *mut *mut c_char,
    out_surv: *mut *mut c_char,
) -> LgmStatus {
    guard(|| {
        let h = handle(h)?;
        let table = Table::from_csv_str(req_str(newdata_csv, "newdata_csv")?)?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        let req = PredictRequest {
            n_time_points: o.n_time_points,
            n_sample: o.n_sample,
            n_sample_re: o.n_sample_re,
            inv_link: o.inv_link,
            survival: o.survival,
            cif: o.cif,
            csurv: (o.csurv >= 0.0).then_some(o.csurv),
            seed: o.seed,
            ..PredictRequest::new(o.horizon)
        };
        let p = predict(&h.model, &h.fit, &table, &req)?;
        let csv = |write: &dyn Fn(&mut Vec<u8>) -> lgmjoint::Result<()>| -> Result<*mut c_char, Failure> {
            let mut buf = Vec::new();
            write(&mut buf)?;
            to_c(String::from_utf8(buf).expect("CSV output is UTF-8"))
        };
        if !out_long.is_null() {
            out_long.write(csv(&|b| p.write_long_csv(b))?);
        }
        if !out_surv.is_null() {
            out_surv.write(csv(&|b| p.write_surv_csv(b))?);
        }
        Ok(())
    })
}

/// Runs a verification suite; writes the checks as JSON and whether all passed.
///
/// # Safety
/// `suite` is NUL-terminated; outputs are null or writable.
#[no_mangle]
pub unsafe extern "C" fn lgm_verify(suite: *const c_char, out_json: *mut *mut c_char, all_passed: *mut bool) -> LgmStatus {
    guard(|| {
        let checks = verify::run_suite(req_str(suite, "suite")?)?;
        if !all_passed.is_null() {
            all_passed.write(checks.iter().all(|c| c.passed));
        }
        if !out_json.is_null() {
            out_json.write(to_c(verify::checks_to_json(&checks))?);
        }
        Ok(())
    })
}

