//! C ABI over the milab core: load a trained checkpoint behind an opaque
//! handle, run forward passes, and extract per-class per-instance
//! contributions, so other languages can bind the trained models.
//!
//! Conventions: every fallible call returns a [`MilabStatus`]; on any
//! non-OK status a human-readable message is available from
//! [`milab_last_error`] until the next call on the same thread. Buffers
//! are caller-allocated with sizes documented per function. All
//! functions are panic-safe across the FFI boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use milab::autodiff::Tensor;
use milab::error::Error;
use milab::model::Composition;

/// Opaque handle to a loaded MIL model.
pub struct MilabModel {
    inner: milab::model::MilModel,
}

/// Status codes returned by every fallible API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilabStatus {
    Ok = 0,
    /// Null pointer, bad dimension, or otherwise malformed argument.
    InvalidArgument = 1,
    /// Filesystem failure while reading a checkpoint.
    Io = 2,
    /// The file is not a valid checkpoint of a supported version.
    Format = 3,
    /// The operation requires an additive-composition model.
    Composition = 4,
    /// NaN or other numeric failure during evaluation.
    Numeric = 5,
    /// Unexpected internal failure (including caught panics).
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MilabStatus {
    match err {
        Error::Io(_) => MilabStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) | Error::Parse { .. } => MilabStatus::Format,
        Error::UnsupportedComposition | Error::UnsupportedVariant { .. } => {
            MilabStatus::Composition
        }
        Error::Numeric(_) | Error::Divergence(_) => MilabStatus::Numeric,
        Error::Dimension { .. }
        | Error::Axis { .. }
        | Error::LabelRange { .. }
        | Error::Config(_) => MilabStatus::InvalidArgument,
        _ => MilabStatus::Internal,
    }
}

fn guard(body: impl FnOnce() -> MilabStatus) -> MilabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MilabStatus::Internal
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next milab call on the same thread.
#[no_mangle]
pub extern "C" fn milab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn milab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a model checkpoint from `path` into a fresh handle. On success
/// writes the handle to `out_model`; free it with `milab_model_free`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_model` a valid
/// pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn milab_model_load(
    path: *const c_char,
    out_model: *mut *mut MilabModel,
) -> MilabStatus {
    guard(|| {
        if path.is_null() || out_model.is_null() {
            set_error("path and out_model must be non-null");
            return MilabStatus::InvalidArgument;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return MilabStatus::InvalidArgument;
            }
        };
        match milab::checkpoint::load(Path::new(path)) {
            Ok(model) => {
                let handle = Box::new(MilabModel { inner: model });
                unsafe { *out_model = Box::into_raw(handle) };
                MilabStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a handle returned by `milab_model_load`. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer previously returned by
/// `milab_model_load` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn milab_model_free(model: *mut MilabModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of classes the model predicts, or -1 on a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn milab_model_num_classes(model: *const MilabModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    unsafe { &*model }.inner.config.num_classes as i32
}

/// Instance feature dimension the model expects, or -1 on a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn milab_model_input_dim(model: *const MilabModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    unsafe { &*model }.inner.config.input_dim as i32
}

/// 1 if the model uses the additive composition (contributions
/// available), 0 if joint, -1 on a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn milab_model_is_additive(model: *const MilabModel) -> i32 {
    if model.is_null() {
        return -1;
    }
    (unsafe { &*model }.inner.config.composition == Composition::Additive) as i32
}

unsafe fn bag_from_raw(
    model: &milab::model::MilModel,
    instances: *const f64,
    num_instances: usize,
    dim: usize,
) -> Result<Tensor, MilabStatus> {
    if instances.is_null() {
        set_error("instances must be non-null");
        return Err(MilabStatus::InvalidArgument);
    }
    if num_instances == 0 || dim != model.config.input_dim {
        set_error(&format!(
            "bag must have >= 1 instance of dim {}, got {num_instances} x {dim}",
            model.config.input_dim
        ));
        return Err(MilabStatus::InvalidArgument);
    }
    let data = unsafe { std::slice::from_raw_parts(instances, num_instances * dim) };
    Tensor::new(vec![num_instances, dim], data.to_vec()).map_err(|e| {
        set_error(&e.to_string());
        MilabStatus::InvalidArgument
    })
}

/// Run one bag through the model.
///
/// `instances` holds `num_instances * dim` doubles, row-major. `logits_out`
/// receives `num_classes` values. `attention_out` may be null; otherwise it
/// receives `num_instances` attention weights (uniform under mean pooling).
///
/// # Safety
/// `model` must be a live handle; buffers must be valid for the documented
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn milab_model_forward(
    model: *const MilabModel,
    instances: *const f64,
    num_instances: usize,
    dim: usize,
    logits_out: *mut f64,
    attention_out: *mut f64,
) -> MilabStatus {
    guard(|| {
        if model.is_null() || logits_out.is_null() {
            set_error("model and logits_out must be non-null");
            return MilabStatus::InvalidArgument;
        }
        let model = &unsafe { &*model }.inner;
        let bag = match unsafe { bag_from_raw(model, instances, num_instances, dim) } {
            Ok(b) => b,
            Err(status) => return status,
        };
        match model.forward(&bag) {
            Ok(out) => {
                unsafe {
                    ptr::copy_nonoverlapping(
                        out.logits.data().as_ptr(),
                        logits_out,
                        model.config.num_classes,
                    );
                    if !attention_out.is_null() {
                        ptr::copy_nonoverlapping(
                            out.attention.as_ptr(),
                            attention_out,
                            num_instances,
                        );
                    }
                }
                MilabStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Extract raw per-class per-instance contributions from an additive
/// model. `contributions_out` receives `num_classes * num_instances`
/// doubles, row-major with one row per class; row sums equal the logits.
/// Joint models yield `MILAB_STATUS_COMPOSITION`.
///
/// # Safety
/// `model` must be a live handle; buffers must be valid for the documented
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn milab_model_contributions(
    model: *const MilabModel,
    instances: *const f64,
    num_instances: usize,
    dim: usize,
    contributions_out: *mut f64,
) -> MilabStatus {
    guard(|| {
        if model.is_null() || contributions_out.is_null() {
            set_error("model and contributions_out must be non-null");
            return MilabStatus::InvalidArgument;
        }
        let model = &unsafe { &*model }.inner;
        let bag = match unsafe { bag_from_raw(model, instances, num_instances, dim) } {
            Ok(b) => b,
            Err(status) => return status,
        };
        match milab::credit::extract_contributions(model, &bag) {
            Ok(map) => {
                unsafe {
                    ptr::copy_nonoverlapping(
                        map.values.data().as_ptr(),
                        contributions_out,
                        model.config.num_classes * num_instances,
                    );
                }
                MilabStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}
