//! C interface to the toolkit. Objects cross the boundary as opaque handles
//! that the caller releases with the matching `*_free`; every fallible call
//! returns a [`TtcmStatus`] and leaves a message for
//! [`ttcm_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ttcm::estimation::{self, FitOptions, FitResult};
use ttcm::identifiability;
use ttcm::model::{self, Configuration, KineticParams, TacTable};
use ttcm::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TtcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DegenerateParams = 3,
    InsufficientSamples = 4,
    NoConvergence = 5,
    NumericalFailure = 6,
    HypothesisUnmet = 7,
    Io = 8,
    Panic = 9,
}

/// A validated configuration.
pub struct TtcmConfig(Configuration);

/// Sampled curves on a shared time grid.
pub struct TtcmTacs(TacTable);

/// Outcome of a joint fit.
pub struct TtcmFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_for(err: &Error) -> TtcmStatus {
    match err.root() {
        Error::InvalidInput(_) | Error::InvalidParams { .. } | Error::MissingWholeBlood | Error::Json(_) => {
            TtcmStatus::InvalidInput
        }
        Error::DegenerateParams { .. } => TtcmStatus::DegenerateParams,
        Error::InsufficientSamples { .. } => TtcmStatus::InsufficientSamples,
        Error::NoConvergence { .. } => TtcmStatus::NoConvergence,
        Error::HypothesisUnmet(_) => TtcmStatus::HypothesisUnmet,
        Error::Io(_) | Error::Csv(_) => TtcmStatus::Io,
        _ => TtcmStatus::NumericalFailure,
    }
}

fn fail(err: Error) -> TtcmStatus {
    let status = status_for(&err);
    set_error(err.to_string());
    status
}

fn guard<F: FnOnce() -> TtcmStatus>(body: F) -> TtcmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => {
            if status == TtcmStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TtcmStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, TtcmStatus> {
    if s.is_null() {
        set_error("null string argument".into());
        return Err(TtcmStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not UTF-8".into());
        TtcmStatus::InvalidInput
    })
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize) -> Result<&'a [f64], TtcmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error("null array argument".into());
        return Err(TtcmStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn null_error() -> TtcmStatus {
    set_error("null pointer argument".into());
    TtcmStatus::NullPointer
}

fn to_c_string(s: String, out: *mut *mut c_char) -> TtcmStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            TtcmStatus::Ok
        }
        Err(_) => {
            set_error("string contains NUL".into());
            TtcmStatus::InvalidInput
        }
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn ttcm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ttcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from a `*_to_json` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ttcm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Eigenvalues `alpha1 > alpha2` of the tissue system.
///
/// # Safety
/// `alpha1` and `alpha2` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_compute_alphas(
    k2: f64,
    k3: f64,
    k4: f64,
    alpha1: *mut f64,
    alpha2: *mut f64,
) -> TtcmStatus {
    guard(|| {
        if alpha1.is_null() || alpha2.is_null() {
            return null_error();
        }
        let alphas = KineticParams::new(1.0, k2, k3, k4).and_then(|p| model::compute_alphas(&p));
        match alphas {
            Ok(a) => {
                *alpha1 = a.alpha1;
                *alpha2 = a.alpha2;
                TtcmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Parses a configuration from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_config_from_json(json: *const c_char, out: *mut *mut TtcmConfig) -> TtcmStatus {
    guard(|| {
        if out.is_null() {
            return null_error();
        }
        let text = match str_arg(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ttcm::io::read_config(text.as_bytes()) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(TtcmConfig(c)));
                TtcmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttcm_config_free(config: *mut TtcmConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ttcm_config_n_regions(config: *const TtcmConfig) -> usize {
    config.as_ref().map_or(0, |c| c.0.n_regions())
}

/// Serializes the configuration; free the result with [`ttcm_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_config_to_json(config: *const TtcmConfig, out: *mut *mut c_char) -> TtcmStatus {
    guard(|| {
        let (Some(config), false) = (config.as_ref(), out.is_null()) else {
            return null_error();
        };
        match serde_json::to_string(&config.0) {
            Ok(s) => to_c_string(s, out),
            Err(e) => fail(e.into()),
        }
    })
}

/// Tissue curve of region `region` (0-based) at `n` times into `values`.
///
/// # Safety
/// `times` and `values` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ttcm_eval_ct(
    config: *const TtcmConfig,
    region: usize,
    times: *const f64,
    n: usize,
    values: *mut f64,
) -> TtcmStatus {
    guard(|| {
        let Some(config) = config.as_ref() else {
            return null_error();
        };
        let times = match slice_arg(times, n) {
            Ok(t) => t,
            Err(s) => return s,
        };
        if n > 0 && values.is_null() {
            return null_error();
        }
        let Some(r) = config.0.regions().get(region) else {
            set_error(format!("region index {region} out of range"));
            return TtcmStatus::InvalidInput;
        };
        let kernel = match model::TissueKernel::new(&r.params) {
            Ok(k) => k,
            Err(e) => return fail(e.in_region(&r.id)),
        };
        for (l, &t) in times.iter().enumerate() {
            *values.add(l) = kernel.eval(config.0.input(), t);
        }
        TtcmStatus::Ok
    })
}

/// Noiseless tissue curves for every region on `n` strictly increasing
/// positive times.
///
/// # Safety
/// `times` must hold `n` elements and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_simulate(
    config: *const TtcmConfig,
    times: *const f64,
    n: usize,
    out: *mut *mut TtcmTacs,
) -> TtcmStatus {
    guard(|| {
        let (Some(config), false) = (config.as_ref(), out.is_null()) else {
            return null_error();
        };
        let times = match slice_arg(times, n) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match model::simulate_tacs(&config.0, times, None, None) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(TtcmTacs(t)));
                TtcmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Builds a table from `n_regions` curves stored row-major in `values`
/// (`n_regions × n_times`). Regions are named `r1, r2, ...`.
///
/// # Safety
/// `times` must hold `n_times` and `values` `n_regions·n_times` elements.
#[no_mangle]
pub unsafe extern "C" fn ttcm_tacs_new(
    times: *const f64,
    n_times: usize,
    values: *const f64,
    n_regions: usize,
    out: *mut *mut TtcmTacs,
) -> TtcmStatus {
    guard(|| {
        if out.is_null() {
            return null_error();
        }
        let Some(total) = n_regions.checked_mul(n_times) else {
            set_error("table dimensions overflow".into());
            return TtcmStatus::InvalidInput;
        };
        let (times, values) = match (slice_arg(times, n_times), slice_arg(values, total)) {
            (Ok(t), Ok(v)) => (t, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let curves = (0..n_regions)
            .map(|i| (format!("r{}", i + 1), values[i * n_times..(i + 1) * n_times].to_vec()))
            .collect();
        match TacTable::new(times.to_vec(), curves, None) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(TtcmTacs(t)));
                TtcmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `tacs` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttcm_tacs_free(tacs: *mut TtcmTacs) {
    if !tacs.is_null() {
        drop(Box::from_raw(tacs));
    }
}

/// # Safety
/// `tacs` must be a live handle; the out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_tacs_dims(tacs: *const TtcmTacs, n_regions: *mut usize, n_times: *mut usize) -> TtcmStatus {
    guard(|| {
        let Some(tacs) = tacs.as_ref() else {
            return null_error();
        };
        if n_regions.is_null() || n_times.is_null() {
            return null_error();
        }
        *n_regions = tacs.0.curves().len();
        *n_times = tacs.0.len();
        TtcmStatus::Ok
    })
}

/// Copies the curve of region `region` into `values` (`len` must equal the
/// number of times).
///
/// # Safety
/// `values` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn ttcm_tacs_curve(
    tacs: *const TtcmTacs,
    region: usize,
    values: *mut f64,
    len: usize,
) -> TtcmStatus {
    guard(|| {
        let Some(tacs) = tacs.as_ref() else {
            return null_error();
        };
        let Some((_, curve)) = tacs.0.curves().get(region) else {
            set_error(format!("region index {region} out of range"));
            return TtcmStatus::InvalidInput;
        };
        if len != curve.len() {
            set_error(format!("buffer holds {len} values, curve has {}", curve.len()));
            return TtcmStatus::InvalidInput;
        }
        if values.is_null() && len > 0 {
            return null_error();
        }
        ptr::copy_nonoverlapping(curve.as_ptr(), values, len);
        TtcmStatus::Ok
    })
}

/// Whether the configuration satisfies the region-richness condition.
///
/// # Safety
/// `config` must be a live handle and `satisfied` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_check_richness(config: *const TtcmConfig, tol: f64, satisfied: *mut bool) -> TtcmStatus {
    guard(|| {
        let (Some(config), false) = (config.as_ref(), satisfied.is_null()) else {
            return null_error();
        };
        match identifiability::check_region_richness(&config.0, tol) {
            Ok(r) => {
                *satisfied = r.satisfied;
                TtcmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Joint fit. `options_json` holds fit options (NULL for defaults with
/// `p = 1`). On [`TtcmStatus::NoConvergence`] the best result is still
/// written to `out`.
///
/// # Safety
/// `tacs` must be a live handle, `options_json` NULL or NUL-terminated, and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_joint(
    tacs: *const TtcmTacs,
    options_json: *const c_char,
    out: *mut *mut TtcmFit,
) -> TtcmStatus {
    guard(|| {
        let (Some(tacs), false) = (tacs.as_ref(), out.is_null()) else {
            return null_error();
        };
        let options: FitOptions = if options_json.is_null() {
            FitOptions::default()
        } else {
            let text = match str_arg(options_json) {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(o) => o,
                Err(e) => return fail(e.into()),
            }
        };
        match estimation::fit_joint(&tacs.0, &options) {
            Ok(fit) => {
                *out = Box::into_raw(Box::new(TtcmFit(fit)));
                TtcmStatus::Ok
            }
            Err(Error::NoConvergence { best }) => {
                set_error(format!(
                    "no start reached the residual tolerance (best relative sse {:e})",
                    best.relative_sse
                ));
                *out = Box::into_raw(Box::new(TtcmFit(*best)));
                TtcmStatus::NoConvergence
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_free(fit: *mut TtcmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Sum of squared residuals, or NaN for a NULL handle.
///
/// # Safety
/// `fit` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_sse(fit: *const TtcmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.sse)
}

/// # Safety
/// `fit` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_converged(fit: *const TtcmFit) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged)
}

/// New configuration handle holding the fitted (gauge-fixed) configuration.
///
/// # Safety
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_config(fit: *const TtcmFit, out: *mut *mut TtcmConfig) -> TtcmStatus {
    guard(|| {
        let (Some(fit), false) = (fit.as_ref(), out.is_null()) else {
            return null_error();
        };
        *out = Box::into_raw(Box::new(TtcmConfig(fit.0.config.clone())));
        TtcmStatus::Ok
    })
}

/// Serializes the fit result; free the result with [`ttcm_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn ttcm_fit_to_json(fit: *const TtcmFit, out: *mut *mut c_char) -> TtcmStatus {
    guard(|| {
        let (Some(fit), false) = (fit.as_ref(), out.is_null()) else {
            return null_error();
        };
        match serde_json::to_string(&fit.0) {
            Ok(s) => to_c_string(s, out),
            Err(e) => fail(e.into()),
        }
    })
}
