//! C ABI over the alip engine. All entry points are panic-safe, return an
//! `AlipStatus` code, and hand results back through opaque handles. The
//! last error message for the calling thread is available through
//! `alip_last_error`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use libc::{c_char, c_double, size_t};

use alip::formulation::Enhancements;
use alip::model::HouseholdModel;
use alip::pipeline::{run, DisaggregationResult, PipelineConfig};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlipStatus {
    /// Success.
    AlipOk = 0,
    /// A required pointer argument was null.
    AlipErrNull = 1,
    /// A string argument was not valid UTF-8.
    AlipErrUtf8 = 2,
    /// File could not be read or parsed.
    AlipErrModel = 3,
    /// The solver or pipeline rejected the input.
    AlipErrRun = 4,
    /// An index or buffer size was out of range.
    AlipErrBounds = 5,
    /// Metric undefined for the given input (zero ground truth or length
    /// mismatch).
    AlipErrMetrics = 6,
    /// Unexpected internal failure.
    AlipErrInternal = 7,
}

/// Pipeline configuration, mirrors the library defaults when obtained from
/// `alip_config_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AlipConfig {
    /// Enable the augmentation constraint rows.
    pub constraints: bool,
    /// Enable the state-transition-diagram correction.
    pub std_correction: bool,
    /// Enable the lagged median filter.
    pub median: bool,
    /// Enable the transient LP refinement.
    pub lp_refine: bool,
    /// Median lag L.
    pub median_lag: size_t,
}

/// Opaque compiled household model.
pub struct AlipModel {
    inner: HouseholdModel,
}

/// Opaque disaggregation result.
pub struct AlipResult {
    inner: DisaggregationResult,
    num_appliances: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg).unwrap_or_default();
    });
}

fn guard(body: impl FnOnce() -> AlipStatus) -> AlipStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            AlipStatus::AlipErrInternal
        }
    }
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn alip_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Default pipeline configuration: every enhancement on, lag 4.
#[no_mangle]
pub extern "C" fn alip_config_default() -> AlipConfig {
    let d = PipelineConfig::default();
    AlipConfig {
        constraints: true,
        std_correction: true,
        median: true,
        lp_refine: true,
        median_lag: d.median_lag,
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, AlipStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(AlipStatus::AlipErrNull);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        AlipStatus::AlipErrUtf8
    })
}

/// Loads and compiles a household model from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alip_model_load(
    path: *const c_char,
    out: *mut *mut AlipModel,
) -> AlipStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return AlipStatus::AlipErrNull;
        }
        let path = match read_str(path) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match alip::io::load_model(Path::new(path)) {
            Ok(file) => {
                *out = Box::into_raw(Box::new(AlipModel { inner: file.model }));
                AlipStatus::AlipOk
            }
            Err(e) => {
                set_error(format!("{e}"));
                AlipStatus::AlipErrModel
            }
        }
    })
}

/// Frees a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `alip_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alip_model_free(model: *mut AlipModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of appliances in the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn alip_model_num_appliances(model: *const AlipModel) -> size_t {
    if model.is_null() {
        return 0;
    }
    (*model).inner.num_appliances()
}

/// Total number of non-OFF states in the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn alip_model_num_states(model: *const AlipModel) -> size_t {
    if model.is_null() {
        return 0;
    }
    (*model).inner.num_states()
}

/// Copies the id of appliance `j` into `buf` (NUL-terminated, truncated to
/// `cap` bytes). Returns `AlipErrBounds` when `j` is out of range.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold at least `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn alip_model_appliance_id(
    model: *const AlipModel,
    j: size_t,
    buf: *mut c_char,
    cap: size_t,
) -> AlipStatus {
    guard(|| {
        if model.is_null() || buf.is_null() {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let appliances = &(*model).inner.appliances;
        let Some(appliance) = appliances.get(j) else {
            set_error(format!(
                "appliance index {j} out of range ({} appliances)",
                appliances.len()
            ));
            return AlipStatus::AlipErrBounds;
        };
        if cap == 0 {
            set_error("zero-capacity buffer");
            return AlipStatus::AlipErrBounds;
        }
        let bytes = appliance.id.as_bytes();
        let n = bytes.len().min(cap - 1);
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
        *buf.add(n) = 0;
        AlipStatus::AlipOk
    })
}

/// Runs the disaggregation pipeline over `len` aggregate readings.
///
/// # Safety
/// `readings` must point to `len` doubles; `model`, `config`, and `out`
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn alip_run(
    model: *const AlipModel,
    readings: *const c_double,
    len: size_t,
    config: *const AlipConfig,
    out: *mut *mut AlipResult,
) -> AlipStatus {
    guard(|| {
        if model.is_null() || out.is_null() || config.is_null() || (readings.is_null() && len > 0) {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let cfg = &*config;
        let pipeline_cfg = PipelineConfig {
            enhancements: Enhancements {
                constraints: cfg.constraints,
                std_correction: cfg.std_correction,
                median: cfg.median,
                lp_refine: cfg.lp_refine,
            },
            median_lag: cfg.median_lag,
            ..PipelineConfig::default()
        };
        let series = std::slice::from_raw_parts(readings, len);
        let model_ref = &(*model).inner;
        match run(model_ref, series, &pipeline_cfg) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(AlipResult {
                    inner: result,
                    num_appliances: model_ref.num_appliances(),
                }));
                AlipStatus::AlipOk
            }
            Err(e) => {
                set_error(format!("{e}"));
                AlipStatus::AlipErrRun
            }
        }
    })
}

/// Frees a result handle. Null is ignored.
///
/// # Safety
/// `result` must come from `alip_run` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn alip_result_free(result: *mut AlipResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of timesteps in the result, or 0 for a null handle.
///
/// # Safety
/// `result` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn alip_result_len(result: *const AlipResult) -> size_t {
    if result.is_null() {
        return 0;
    }
    (*result).inner.assignments.len()
}

/// Refined power draw of appliance `j` at timestep `k`, written to `out`.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alip_result_power_at(
    result: *const AlipResult,
    k: size_t,
    j: size_t,
    out: *mut c_double,
) -> AlipStatus {
    guard(|| {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let r = &(*result).inner;
        if k >= r.power.len() || j >= (*result).num_appliances {
            set_error(format!("index ({k}, {j}) out of range"));
            return AlipStatus::AlipErrBounds;
        }
        *out = r.power[k][j];
        AlipStatus::AlipOk
    })
}

/// Local state (0 = OFF) of appliance `j` at timestep `k`, written to `out`.
///
/// # Safety
/// `result` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn alip_result_state_at(
    result: *const AlipResult,
    k: size_t,
    j: size_t,
    out: *mut size_t,
) -> AlipStatus {
    guard(|| {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let r = &(*result).inner;
        if k >= r.assignments.len() || j >= (*result).num_appliances {
            set_error(format!("index ({k}, {j}) out of range"));
            return AlipStatus::AlipErrBounds;
        }
        *out = r.assignments[k].choices[j];
        AlipStatus::AlipOk
    })
}

/// Copies the full power column of appliance `j` (one value per timestep)
/// into `buf`, which must hold at least `alip_result_len` doubles.
///
/// # Safety
/// `result` must be a live handle; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn alip_result_power_series(
    result: *const AlipResult,
    j: size_t,
    buf: *mut c_double,
    cap: size_t,
) -> AlipStatus {
    guard(|| {
        if result.is_null() || buf.is_null() {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let r = &(*result).inner;
        if j >= (*result).num_appliances {
            set_error(format!("appliance index {j} out of range"));
            return AlipStatus::AlipErrBounds;
        }
        if cap < r.power.len() {
            set_error(format!("buffer holds {cap} values, need {}", r.power.len()));
            return AlipStatus::AlipErrBounds;
        }
        for (k, row) in r.power.iter().enumerate() {
            *buf.add(k) = row[j];
        }
        AlipStatus::AlipOk
    })
}

/// How many appliance-timestep pairs each cleanup stage rewrote, plus the
/// number of LP-refined samples.
///
/// # Safety
/// `result` must be a live handle; out pointers may be null to skip fields.
#[no_mangle]
pub unsafe extern "C" fn alip_result_counters(
    result: *const AlipResult,
    std_corrections: *mut size_t,
    median_corrections: *mut size_t,
    lp_refined_samples: *mut size_t,
) -> AlipStatus {
    guard(|| {
        if result.is_null() {
            set_error("null result handle");
            return AlipStatus::AlipErrNull;
        }
        let c = (*result).inner.counters;
        if !std_corrections.is_null() {
            *std_corrections = c.std_corrections;
        }
        if !median_corrections.is_null() {
            *median_corrections = c.median_corrections;
        }
        if !lp_refined_samples.is_null() {
            *lp_refined_samples = c.lp_refined_samples;
        }
        AlipStatus::AlipOk
    })
}

/// Overall accuracy ACC between two row-major t-by-n matrices.
///
/// # Safety
/// `gt` and `est` must each point to `t * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn alip_acc(
    gt: *const c_double,
    est: *const c_double,
    t: size_t,
    n: size_t,
    out: *mut c_double,
) -> AlipStatus {
    guard(|| {
        if out.is_null() || ((gt.is_null() || est.is_null()) && t * n > 0) {
            set_error("null argument");
            return AlipStatus::AlipErrNull;
        }
        let rows = |ptr: *const c_double| -> Vec<Vec<f64>> {
            (0..t)
                .map(|k| std::slice::from_raw_parts(ptr.add(k * n), n).to_vec())
                .collect()
        };
        match alip::metrics::acc(&rows(gt), &rows(est)) {
            Ok(v) => {
                *out = v;
                AlipStatus::AlipOk
            }
            Err(e) => {
                set_error(format!("{e}"));
                AlipStatus::AlipErrMetrics
            }
        }
    })
}
