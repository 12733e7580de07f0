//! C ABI over `cvpower`.
//!
//! Every fallible function returns a [`CvpowerStatus`] and writes results
//! through out-pointers. On failure the message is kept per thread and can be
//! read with [`cvpower_last_error`]. Handles are opaque and must be released
//! with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cvpower::calc::{self, PowerModel};
use cvpower::cv::CvMethod;
use cvpower::datagen::DatasetSpec;
use cvpower::mc::{self, McConfig, McSummary};
use cvpower::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvpowerStatus {
    Ok = 0,
    InvalidInput = 1,
    Range = 2,
    TargetUnreachable = 3,
    InfeasibleSplit = 4,
    Parse = 5,
    Io = 6,
    NullPointer = 7,
    Failed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvpowerMethod {
    SingleHoldout = 0,
    Kfold = 1,
    TrainValTest = 2,
    NestedKfold = 3,
}

fn method_from_c(code: i32) -> Option<CvMethod> {
    Some(match code {
        c if c == CvpowerMethod::SingleHoldout as i32 => CvMethod::SingleHoldout,
        c if c == CvpowerMethod::Kfold as i32 => CvMethod::KFold,
        c if c == CvpowerMethod::TrainValTest as i32 => CvMethod::TrainValTest,
        c if c == CvpowerMethod::NestedKfold as i32 => CvMethod::NestedKFold,
        _ => return None,
    })
}

/// Calculator coefficients and confidence tables.
pub struct CvpowerModel {
    inner: PowerModel,
}

/// A Monte Carlo scenario definition.
pub struct CvpowerScenario {
    inner: McConfig,
}

/// Results of a finished scenario.
pub struct CvpowerSummary {
    inner: McSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut buf = e.borrow_mut();
        buf.clear();
        buf.extend(msg.bytes().filter(|&b| b != 0));
    });
}

fn status_of(err: &Error) -> CvpowerStatus {
    match err {
        Error::InvalidInput(_)
        | Error::Shape(_)
        | Error::Degenerate(_)
        | Error::InvalidTrainingSet(_) => CvpowerStatus::InvalidInput,
        Error::Range(_) => CvpowerStatus::Range,
        Error::TargetUnreachable { .. } => CvpowerStatus::TargetUnreachable,
        Error::InfeasibleSplit(_) => CvpowerStatus::InfeasibleSplit,
        Error::Parse(_) => CvpowerStatus::Parse,
        Error::Io(_) => CvpowerStatus::Io,
        _ => CvpowerStatus::Failed,
    }
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard<F>(f: F) -> CvpowerStatus
where
    F: FnOnce() -> Result<(), CvpowerStatus>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CvpowerStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            CvpowerStatus::Panic
        }
    }
}

fn fail(err: Error) -> CvpowerStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn null() -> CvpowerStatus {
    set_error("null pointer argument");
    CvpowerStatus::NullPointer
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cvpower_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Returns a handle to the built-in model. Never null.
#[no_mangle]
pub extern "C" fn cvpower_model_default() -> *mut CvpowerModel {
    Box::into_raw(Box::new(CvpowerModel {
        inner: PowerModel::default(),
    }))
}

/// Loads a model from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_model_load(
    path: *const c_char,
    out: *mut *mut CvpowerModel,
) -> CvpowerStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::InvalidInput("path is not UTF-8".into())))?;
        let model = PowerModel::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(CvpowerModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cvpower_model_free(model: *mut CvpowerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Bit set in `*out_warnings` when `l0` is outside the fitted range.
pub const CVPOWER_WARN_EXTRAPOLATION: u32 = 1;
/// Bit set when `d0` is outside [0.4, 1.4].
pub const CVPOWER_WARN_EFFECT_RANGE: u32 = 2;
/// Bit set when the formula value was clamped to 1.
pub const CVPOWER_WARN_CLAMPED: u32 = 4;

/// Required pairs for a significant model. `out_warnings` may be null.
///
/// # Safety
/// `model` must be a live handle; `out_n` writable; `out_warnings` null or writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_required_sample_size(
    model: *const CvpowerModel,
    d0: f64,
    m0: usize,
    l0: usize,
    out_n: *mut u64,
    out_warnings: *mut u32,
) -> CvpowerStatus {
    guard(|| {
        if model.is_null() || out_n.is_null() {
            return Err(null());
        }
        let r = calc::required_sample_size(d0, m0, l0, &(*model).inner).map_err(fail)?;
        *out_n = r.n;
        if !out_warnings.is_null() {
            *out_warnings = r.warnings.iter().fold(0, |acc, w| {
                acc | match w {
                    calc::CalcWarning::Extrapolation { .. } => CVPOWER_WARN_EXTRAPOLATION,
                    calc::CalcWarning::EffectOutsideRange { .. } => CVPOWER_WARN_EFFECT_RANGE,
                    calc::CalcWarning::Clamped { .. } => CVPOWER_WARN_CLAMPED,
                }
            });
        }
        Ok(())
    })
}

/// Interpolated nested-CV C22 in percent.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_nested_model_confidence(
    model: *const CvpowerModel,
    d0: f64,
    m0: f64,
    n0: f64,
    out: *mut f64,
) -> CvpowerStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(null());
        }
        *out = calc::nested_model_confidence(d0, m0, n0, &(*model).inner).map_err(fail)?;
        Ok(())
    })
}

/// Smallest number of pairs reaching `target` percent C22.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_recommended_sample_size(
    model: *const CvpowerModel,
    d0: f64,
    m0: f64,
    target: f64,
    out: *mut u64,
) -> CvpowerStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return Err(null());
        }
        *out = calc::recommended_sample_size(d0, m0, target, &(*model).inner).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `out_small` and `out_large` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_adjust_unbalanced(
    n_r: u64,
    gamma_db: f64,
    out_small: *mut u64,
    out_large: *mut u64,
) -> CvpowerStatus {
    guard(|| {
        if out_small.is_null() || out_large.is_null() {
            return Err(null());
        }
        let (s, l) = calc::adjust_unbalanced(n_r, gamma_db).map_err(fail)?;
        *out_small = s;
        *out_large = l;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_effective_d(d: f64, gamma_d: f64, out: *mut f64) -> CvpowerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = calc::effective_d(d, gamma_d).map_err(fail)?;
        Ok(())
    })
}

/// Balanced scenario selecting `l` features, alpha 0.05, beta 0.2. `method`
/// is a `CvpowerMethod` value.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_scenario_new(
    n_per_class: usize,
    m: usize,
    l: usize,
    d_effect: f64,
    method: i32,
    repetitions: usize,
    master_seed: u64,
    out: *mut *mut CvpowerScenario,
) -> CvpowerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let method = method_from_c(method)
            .ok_or_else(|| fail(Error::InvalidInput(format!("unknown method code {method}"))))?;
        let cfg = McConfig::new(DatasetSpec::balanced(n_per_class, m, l, d_effect), method)
            .with_repetitions(repetitions)
            .with_seed(master_seed);
        cfg.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(CvpowerScenario { inner: cfg }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvpower_scenario_free(scenario: *mut CvpowerScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario on `workers` threads (0 = machine default).
///
/// # Safety
/// `scenario` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_scenario_run(
    scenario: *const CvpowerScenario,
    workers: usize,
    out: *mut *mut CvpowerSummary,
) -> CvpowerStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return Err(null());
        }
        let s = mc::run_scenario(&(*scenario).inner, workers).map_err(fail)?;
        *out = Box::into_raw(Box::new(CvpowerSummary { inner: s }));
        Ok(())
    })
}

/// # Safety
/// `summary` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cvpower_summary_free(summary: *mut CvpowerSummary) {
    if !summary.is_null() {
        drop(Box::from_raw(summary));
    }
}

/// Mean and sample std of the per-repetition accuracies.
///
/// # Safety
/// `summary` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_summary_accuracy(
    summary: *const CvpowerSummary,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> CvpowerStatus {
    guard(|| {
        if summary.is_null() || out_mean.is_null() || out_std.is_null() {
            return Err(null());
        }
        *out_mean = (*summary).inner.mean_acc;
        *out_std = (*summary).inner.std_acc;
        Ok(())
    })
}

/// The H0 upper bound when `d_effect` was 0, otherwise the Ha lower bound.
/// `out_is_h0` receives 1 for the former and 0 for the latter.
///
/// # Safety
/// `summary` must be a live handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_summary_bound(
    summary: *const CvpowerSummary,
    out_bound: *mut f64,
    out_is_h0: *mut i32,
) -> CvpowerStatus {
    guard(|| {
        if summary.is_null() || out_bound.is_null() || out_is_h0.is_null() {
            return Err(null());
        }
        let s = &(*summary).inner;
        match (s.h0_upper, s.ha_lower) {
            (Some(v), _) => {
                *out_bound = v;
                *out_is_h0 = 1;
            }
            (None, Some(v)) => {
                *out_bound = v;
                *out_is_h0 = 0;
            }
            (None, None) => return Err(fail(Error::InvalidInput("summary has no bound".into()))),
        }
        Ok(())
    })
}

/// `C_{l,d}` as a fraction.
///
/// # Safety
/// `summary` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cvpower_summary_confidence(
    summary: *const CvpowerSummary,
    d: usize,
    out: *mut f64,
) -> CvpowerStatus {
    guard(|| {
        if summary.is_null() || out.is_null() {
            return Err(null());
        }
        let s = &(*summary).inner;
        let value = s
            .confidence
            .iter()
            .find(|((_, dd), _)| *dd == d)
            .map(|(_, v)| *v)
            .ok_or_else(|| fail(Error::Range(format!("no C_(l,{d}) in this summary"))))?;
        *out = value;
        Ok(())
    })
}

/// Copies up to `len` per-repetition accuracies into `buf` and returns the
/// total count through `out_count`. `buf` may be null to query the count.
///
/// # Safety
/// `summary` must be a live handle; `buf` null or `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cvpower_summary_accuracies(
    summary: *const CvpowerSummary,
    buf: *mut f64,
    len: usize,
    out_count: *mut usize,
) -> CvpowerStatus {
    guard(|| {
        if summary.is_null() || out_count.is_null() {
            return Err(null());
        }
        let acc = &(*summary).inner.accuracies;
        if !buf.is_null() {
            let n = acc.len().min(len);
            ptr::copy_nonoverlapping(acc.as_ptr(), buf, n);
        }
        *out_count = acc.len();
        Ok(())
    })
}
