//! C interface to `sdtr`.
//!
//! Cohorts and models are opaque heap handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call
//! returns an [`SdtrStatus`]; on failure a message is available from
//! [`sdtr_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtr::evaluation::{fit_method, Method, MethodSettings};
use sdtr::model_io::{FittedModel, ModelFile};
use sdtr::shared_o::{value_estimate_with_error, NuisanceSpec};
use sdtr::sim::{simulate_cohort, Scenario, SimConfig};
use sdtr::survival::CensoringChoice;
use sdtr::trajectories::{load_cohort, CohortDataset, LoadOptions};
use sdtr::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdtrStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullArgument = 1,
    /// A parameter is out of range.
    InvalidArgument = 2,
    /// Malformed or inconsistent input data, or an I/O failure.
    Data = 3,
    /// Rank deficiency, non-convergence or a non-finite objective.
    Numerical = 4,
    /// The output buffer is too small; the required length was reported.
    BufferTooSmall = 5,
    /// Internal panic; the handle arguments should be considered invalid.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdtrMethod {
    Cq = 0,
    Csql = 1,
    Csol = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdtrCensoring {
    KaplanMeier = 0,
    None = 1,
}

/// Fit settings; obtain defaults from [`sdtr_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdtrFitOptions {
    /// An [`SdtrCensoring`] value.
    pub censoring: i32,
    pub survival_floor: f64,
    pub epsilon: f64,
    pub max_iter: u32,
    pub zero_init: bool,
    pub k: f64,
    pub l1: f64,
}

pub struct SdtrCohort {
    inner: CohortDataset,
}

pub struct SdtrModel {
    inner: ModelFile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SdtrStatus, msg: impl Into<String>) -> SdtrStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> SdtrStatus {
    let status = match &e {
        Error::InvalidInput(_) => SdtrStatus::InvalidArgument,
        _ if e.is_numerical() => SdtrStatus::Numerical,
        _ => SdtrStatus::Data,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SdtrStatus) -> SdtrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SdtrStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, SdtrStatus> {
    if path.is_null() {
        return Err(fail(SdtrStatus::NullArgument, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(SdtrStatus::NullArgument, "path is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(SdtrStatus::NullArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sdtr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdtr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn sdtr_fit_options_default() -> SdtrFitOptions {
    let s = MethodSettings::default();
    SdtrFitOptions {
        censoring: SdtrCensoring::KaplanMeier as i32,
        survival_floor: sdtr::survival::DEFAULT_SURVIVAL_FLOOR,
        epsilon: s.shared_q.epsilon,
        max_iter: s.shared_q.max_iter as u32,
        zero_init: s.shared_q.zero_init,
        k: s.shared_o.k,
        l1: s.shared_o.l1_weight,
    }
}

/// Loads a long-format cohort CSV. `horizon == 0` and `tau <= 0` select
/// the defaults inferred from the file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdtr_cohort_load(
    path: *const c_char,
    horizon: u32,
    tau: f64,
    seed: u64,
    out: *mut *mut SdtrCohort,
) -> SdtrStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let options = LoadOptions {
            horizon: (horizon > 0).then_some(horizon as usize),
            tau: (tau > 0.0).then_some(tau),
            seed,
            ..LoadOptions::default()
        };
        match load_cohort(path, &options) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(SdtrCohort { inner: c }));
                SdtrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Simulates `n` patients of the diabetes model (`scenario` 1 or 2).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdtr_cohort_simulate(
    scenario: u8,
    horizon: u32,
    n: u32,
    seed: u64,
    out: *mut *mut SdtrCohort,
) -> SdtrStatus {
    guard(|| {
        non_null!(out);
        let scenario = match Scenario::try_from(scenario) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        let config = SimConfig {
            seed,
            ..SimConfig::new(scenario, horizon as usize)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match simulate_cohort(&config, n as usize, &mut rng) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(SdtrCohort { inner: sim.dataset }));
                SdtrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of subjects and stages.
///
/// # Safety
/// `cohort` must come from this library; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sdtr_cohort_shape(
    cohort: *const SdtrCohort,
    subjects: *mut usize,
    horizon: *mut usize,
) -> SdtrStatus {
    guard(|| {
        non_null!(cohort);
        let c = &(*cohort).inner;
        if !subjects.is_null() {
            *subjects = c.len();
        }
        if !horizon.is_null() {
            *horizon = c.horizon;
        }
        SdtrStatus::Ok
    })
}

/// # Safety
/// `cohort` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdtr_cohort_free(cohort: *mut SdtrCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// Fits `method` (an [`SdtrMethod`] value) to `cohort`. `options` may be
/// null for defaults.
///
/// # Safety
/// `cohort` must come from this library, `options` must be null or valid,
/// and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdtr_fit(
    cohort: *const SdtrCohort,
    method: i32,
    options: *const SdtrFitOptions,
    out: *mut *mut SdtrModel,
) -> SdtrStatus {
    guard(|| {
        non_null!(cohort, out);
        let o = if options.is_null() {
            sdtr_fit_options_default()
        } else {
            *options
        };
        if !(o.survival_floor > 0.0 && o.survival_floor <= 1.0) {
            return fail(SdtrStatus::InvalidArgument, "survival_floor must lie in (0, 1]");
        }
        if !(o.epsilon > 0.0) || !(o.k > 0.0) || !(o.l1 >= 0.0) || o.max_iter == 0 {
            return fail(
                SdtrStatus::InvalidArgument,
                "epsilon and k must be positive, l1 non-negative, max_iter at least 1",
            );
        }
        let mut settings = MethodSettings::default();
        settings.shared_q.epsilon = o.epsilon;
        settings.shared_q.max_iter = o.max_iter as usize;
        settings.shared_q.zero_init = o.zero_init;
        settings.shared_o.k = o.k;
        settings.shared_o.l1_weight = o.l1;
        settings.shared_o.max_iterations = o.max_iter as usize;
        let nuisance = NuisanceSpec {
            censoring: match o.censoring {
                0 => CensoringChoice::KaplanMeier,
                1 => CensoringChoice::None,
                c => return fail(SdtrStatus::InvalidArgument, format!("unknown censoring kind {c}")),
            },
            survival_floor: o.survival_floor,
            ..NuisanceSpec::default()
        };
        let method = match method {
            m if m == SdtrMethod::Cq as i32 => Method::Cq,
            m if m == SdtrMethod::Csql as i32 => Method::Csql,
            m if m == SdtrMethod::Csol as i32 => Method::Csol,
            m => return fail(SdtrStatus::InvalidArgument, format!("unknown method {m}")),
        };
        let cohort = &(*cohort).inner;
        let fitted = nuisance
            .fit(cohort)
            .and_then(|(cens, prop)| fit_method(method, cohort, &cens, &prop, &settings));
        match fitted {
            Ok(m) => {
                *out = Box::into_raw(Box::new(SdtrModel {
                    inner: ModelFile::new(m, nuisance),
                }));
                SdtrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Copies the decision coefficients used at `stage` (1-based) into `buf`.
/// `len` receives the number of coefficients; with `buf` null or `cap` too
/// small only `len` is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `model` must come from this library, `buf` must hold `cap` doubles,
/// and `len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdtr_model_decision_coefficients(
    model: *const SdtrModel,
    stage: u32,
    buf: *mut f64,
    cap: usize,
    len: *mut usize,
) -> SdtrStatus {
    guard(|| {
        non_null!(model, len);
        let m = &(*model).inner.model;
        let horizon = m.feature_spec().horizon();
        if stage == 0 || stage as usize > horizon {
            return fail(
                SdtrStatus::InvalidArgument,
                format!("stage must lie in 1..={horizon}, got {stage}"),
            );
        }
        let coefs: &[f64] = match m {
            FittedModel::Cq(q) => &q.decision_coefs[stage as usize - 1],
            FittedModel::Csql(q) => &q.shared_psi,
            FittedModel::Csol(o) => &o.psi,
        };
        *len = coefs.len();
        if buf.is_null() || cap < coefs.len() {
            return fail(
                SdtrStatus::BufferTooSmall,
                format!("need room for {} coefficients", coefs.len()),
            );
        }
        std::ptr::copy_nonoverlapping(coefs.as_ptr(), buf, coefs.len());
        SdtrStatus::Ok
    })
}

/// IPCW value estimate of the model's rule on `cohort`, with its standard
/// error. The censoring and propensity models are refit on `cohort` as
/// recorded in the model.
///
/// # Safety
/// `model` and `cohort` must come from this library; `value` must be valid,
/// `std_error` may be null.
#[no_mangle]
pub unsafe extern "C" fn sdtr_model_value(
    model: *const SdtrModel,
    cohort: *const SdtrCohort,
    value: *mut f64,
    std_error: *mut f64,
) -> SdtrStatus {
    guard(|| {
        non_null!(model, cohort, value);
        let file = &(*model).inner;
        let cohort = &(*cohort).inner;
        let result = cohort
            .with_feature_spec(file.model.feature_spec().clone())
            .and_then(|c| {
                let regime = file.model.regime_for(&c.covariate_names)?;
                let (cens, prop) = file.nuisance.fit(&c)?;
                value_estimate_with_error(&c, regime.as_ref(), &prop, &cens)
            });
        match result {
            Ok(v) => {
                *value = v.value;
                if !std_error.is_null() {
                    *std_error = v.std_error;
                }
                SdtrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the model as versioned JSON.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sdtr_model_save(model: *const SdtrModel, path: *const c_char) -> SdtrStatus {
    guard(|| {
        non_null!(model);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match (*model).inner.save(path) {
            Ok(()) => SdtrStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdtr_model_load(path: *const c_char, out: *mut *mut SdtrModel) -> SdtrStatus {
    guard(|| {
        non_null!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ModelFile::load(path) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(SdtrModel { inner: m }));
                SdtrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be null or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdtr_model_free(model: *mut SdtrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
