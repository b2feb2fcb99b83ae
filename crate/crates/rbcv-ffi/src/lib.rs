//! C ABI over the reduced-basis control-variate library.
//!
//! Conventions:
//! - handles are opaque pointers created and freed by this library only;
//! - every fallible call returns an [`RbcvStatus`] code and leaves a
//!   human-readable message readable via [`rbcv_last_error_message`];
//! - panics never cross the boundary (they map to `RBCV_STATUS_INTERNAL`).
//!
//! The generated header lives at `include/rbcv.h`.

use libc::{c_char, size_t};
use rbcv_core::config::ExperimentConfig;
use rbcv_core::cv::ReducedBasis;
use rbcv_core::params::ParameterPoint;
use rbcv_core::runner;
use rbcv_core::Error;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbcvStatus {
    Ok = 0,
    /// Null pointer, malformed UTF-8/NUL, or bad argument shape.
    InvalidArgument = 1,
    /// Configuration file missing or inconsistent.
    Config = 2,
    /// File IO or serialization failure.
    Io = 3,
    /// Numerical failure (non-finite state, solver breakdown).
    Numerical = 4,
    /// Basis and configuration describe different models.
    Mismatch = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

/// One estimation summary crossing the boundary by value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RbcvReport {
    pub mean: f64,
    pub variance: f64,
    pub half_width: f64,
    pub replicates: u64,
    /// Raw-over-controlled variance; 1 when no basis was used.
    pub reduction_factor: f64,
}

/// Opaque experiment handle (a parsed configuration).
pub struct RbcvExperiment {
    cfg: ExperimentConfig,
}

/// Opaque reduced-basis handle.
pub struct RbcvBasis {
    basis: ReducedBasis,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> RbcvStatus {
    match err {
        Error::InvalidArgument(_) | Error::NoSamples | Error::LengthMismatch { .. } => {
            RbcvStatus::InvalidArgument
        }
        Error::Config(_) => RbcvStatus::Config,
        Error::Io(_) | Error::Serialization(_) => RbcvStatus::Io,
        Error::NonFiniteState { .. } | Error::Solver(_) => RbcvStatus::Numerical,
        Error::BasisMismatch(_) => RbcvStatus::Mismatch,
    }
}

fn guarded(f: impl FnOnce() -> Result<(), (RbcvStatus, String)>) -> RbcvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RbcvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&msg);
            RbcvStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (RbcvStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, (RbcvStatus, String)> {
    if ptr.is_null() {
        return Err((RbcvStatus::InvalidArgument, "null path".into()));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| (RbcvStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rbcv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (truncating) and
/// returns the full message length, not counting the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn rbcv_last_error_message(buf: *mut c_char, len: size_t) -> size_t {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // Always terminate.
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Parses an experiment configuration file into a handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rbcv_experiment_load(
    path: *const c_char,
    out: *mut *mut RbcvExperiment,
) -> RbcvStatus {
    guarded(|| {
        if out.is_null() {
            return Err((RbcvStatus::InvalidArgument, "null output handle".into()));
        }
        let path = path_arg(path)?;
        let cfg = ExperimentConfig::load(&path).map_err(core_err)?;
        cfg.resolve().map_err(core_err)?; // validate eagerly
        *out = Box::into_raw(Box::new(RbcvExperiment { cfg }));
        Ok(())
    })
}

/// Frees an experiment handle (null is ignored).
///
/// # Safety
/// `exp` must have come from [`rbcv_experiment_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rbcv_experiment_free(exp: *mut RbcvExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Number of coordinates of the experiment's parameter vector.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn rbcv_experiment_param_dim(exp: *const RbcvExperiment) -> size_t {
    if exp.is_null() {
        return 0;
    }
    match (*exp).cfg.resolve() {
        Ok(r) => r.model.param_dim(),
        Err(_) => 0,
    }
}

/// Runs the offline stage, writing the basis manifest, payloads and the
/// selection trace under `out_dir` (null keeps the configured directory).
///
/// # Safety
/// `exp` must be a live experiment handle; `out_dir` NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn rbcv_offline_run(
    exp: *const RbcvExperiment,
    out_dir: *const c_char,
) -> RbcvStatus {
    guarded(|| {
        if exp.is_null() {
            return Err((RbcvStatus::InvalidArgument, "null experiment".into()));
        }
        let mut cfg = (*exp).cfg.clone();
        if !out_dir.is_null() {
            cfg.out_dir = path_arg(out_dir)?.to_string_lossy().into_owned();
        }
        let resolved = cfg.resolve().map_err(core_err)?;
        runner::run_offline(&resolved).map_err(core_err)?;
        Ok(())
    })
}

/// Loads a stored basis (manifest path or its directory).
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rbcv_basis_load(
    path: *const c_char,
    out: *mut *mut RbcvBasis,
) -> RbcvStatus {
    guarded(|| {
        if out.is_null() {
            return Err((RbcvStatus::InvalidArgument, "null output handle".into()));
        }
        let path = path_arg(path)?;
        let basis = rbcv_core::basis_io::load_basis(&path).map_err(core_err)?;
        *out = Box::into_raw(Box::new(RbcvBasis { basis }));
        Ok(())
    })
}

/// Frees a basis handle (null is ignored).
///
/// # Safety
/// `basis` must have come from [`rbcv_basis_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rbcv_basis_free(basis: *mut RbcvBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Number of elements in a stored basis.
///
/// # Safety
/// `basis` must be a live basis handle.
#[no_mangle]
pub unsafe extern "C" fn rbcv_basis_len(basis: *const RbcvBasis) -> size_t {
    if basis.is_null() {
        0
    } else {
        (*basis).basis.len()
    }
}

/// Runs the online sweep of a stored basis over a fresh test sample,
/// writing the per-query and summary tables under `out_dir` (null keeps the
/// configured directory).
///
/// # Safety
/// `exp` and `basis` must be live handles; `out_dir` NUL-terminated or null.
#[no_mangle]
pub unsafe extern "C" fn rbcv_online_run(
    exp: *const RbcvExperiment,
    basis: *const RbcvBasis,
    out_dir: *const c_char,
) -> RbcvStatus {
    guarded(|| {
        if exp.is_null() || basis.is_null() {
            return Err((RbcvStatus::InvalidArgument, "null handle".into()));
        }
        let mut cfg = (*exp).cfg.clone();
        if !out_dir.is_null() {
            cfg.out_dir = path_arg(out_dir)?.to_string_lossy().into_owned();
        }
        let resolved = cfg.resolve().map_err(core_err)?;
        runner::run_online_with_basis(&resolved, &(*basis).basis).map_err(core_err)?;
        Ok(())
    })
}

/// One estimation at an explicit parameter vector, optionally controlled by
/// a basis handle. `m` overrides the replicate count when nonzero.
///
/// # Safety
/// `exp` must be live, `basis` live or null, `lambda` must point to
/// `lambda_len` doubles, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rbcv_single(
    exp: *const RbcvExperiment,
    basis: *const RbcvBasis,
    lambda: *const f64,
    lambda_len: size_t,
    m: size_t,
    out: *mut RbcvReport,
) -> RbcvStatus {
    guarded(|| {
        if exp.is_null() || lambda.is_null() || out.is_null() {
            return Err((RbcvStatus::InvalidArgument, "null argument".into()));
        }
        let resolved = (*exp).cfg.resolve().map_err(core_err)?;
        let coords = std::slice::from_raw_parts(lambda, lambda_len).to_vec();
        if coords.len() != resolved.model.param_dim() {
            return Err((
                RbcvStatus::InvalidArgument,
                format!(
                    "model {} expects {} coordinates, got {}",
                    resolved.model.name(),
                    resolved.model.param_dim(),
                    coords.len()
                ),
            ));
        }
        let point = ParameterPoint(coords);
        let m_override = if m == 0 { None } else { Some(m) };
        let estimate = match basis.as_ref() {
            Some(b) => {
                if b.basis.model != resolved.descriptor {
                    return Err((
                        RbcvStatus::Mismatch,
                        "basis model does not match the configuration".into(),
                    ));
                }
                let m_use = m_override.unwrap_or(resolved.raw.m_small);
                let paths = rbcv_core::rng::PathBundle::generate(
                    resolved.raw.seed_online,
                    rbcv_core::rng::streams::ONLINE_QUERY,
                    m_use,
                    resolved.model.steps(),
                    resolved.model.state_dim(),
                );
                rbcv_core::cv::controlled_estimate(
                    resolved.model.as_ref(),
                    &b.basis,
                    &point,
                    &paths,
                    resolved.raw.quantile,
                )
                .map_err(core_err)?
            }
            None => {
                runner::run_single(&resolved, &point, None, m_override)
                    .map_err(core_err)?
                    .estimate
            }
        };
        *out = RbcvReport {
            mean: estimate.report.mean,
            variance: estimate.report.variance,
            half_width: estimate.report.half_width,
            replicates: estimate.report.m as u64,
            reduction_factor: estimate.reduction_factor(),
        };
        Ok(())
    })
}

/// Convenience helper for binding tests; not part of the stable surface.
#[doc(hidden)]
pub fn write_header_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rbcv.h"))
}
