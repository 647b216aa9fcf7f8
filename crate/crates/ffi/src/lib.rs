//! C ABI for the temporal structure kit.
//!
//! All functions return a [`TskStatus`] code (0 = ok); objects are passed as
//! opaque pointers. The last error message is kept in thread-local storage
//! and read back with [`tsk_last_error`]. Callers must free every object
//! they receive with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use tsk_core::checkpoint::{load_model, save_model};
use tsk_core::data::{read_features, DataError, FeatureSequence};
use tsk_core::heads::{count_parameters, HeadConfig, Mode, Model};
use tsk_core::tensor::{Tape, Tensor};
use tsk_core::Error;

fn output_len(model: &Model, t: usize) -> usize {
    match model.config.mode {
        Mode::Segmented => model.config.c,
        Mode::Continuous => t * model.config.c,
    }
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TskStatus {
    /// Success.
    Ok = 0,
    /// Null pointer or otherwise invalid argument.
    InvalidArgument = 1,
    /// File could not be read or written.
    Io = 2,
    /// Malformed file contents or incompatible configuration.
    Invalid = 3,
    /// Numerical or shape failure during a forward pass.
    Compute = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let cstr = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(cstr));
}

fn status_of(err: &Error) -> TskStatus {
    match err {
        Error::Io(_) | Error::Data(DataError::Io(_)) => TskStatus::Io,
        Error::Tensor(_) => TskStatus::Compute,
        _ => TskStatus::Invalid,
    }
}

fn fail(err: &Error) -> TskStatus {
    let status = status_of(err);
    set_error(err.to_string());
    status
}

fn invalid(msg: &str) -> TskStatus {
    set_error(msg);
    TskStatus::InvalidArgument
}

unsafe fn path_arg(ptr: *const c_char) -> Option<&'static Path> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(Path::new)
}

/// Opaque feature-sequence handle.
pub struct TskFeatures(FeatureSequence);

/// Opaque model handle.
pub struct TskModel(Model);

/// Returns the last error message for this thread, or NULL when no error
/// has occurred. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn tsk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null(), |msg| msg.as_ptr())
    })
}

/// Reads a TSKF feature file into a new handle stored in `out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsk_features_read(
    path: *const c_char,
    out: *mut *mut TskFeatures,
) -> TskStatus {
    if out.is_null() {
        return invalid("out is null");
    }
    let Some(path) = path_arg(path) else {
        return invalid("path is null or not UTF-8");
    };
    match read_features(path) {
        Ok(seq) => {
            *out = Box::into_raw(Box::new(TskFeatures(seq)));
            TskStatus::Ok
        }
        Err(err) => fail(&err.into()),
    }
}

/// Returns the dimensions of a feature sequence.
///
/// # Safety
/// All pointers must be valid; `features` must come from `tsk_features_read`.
#[no_mangle]
pub unsafe extern "C" fn tsk_features_dims(
    features: *const TskFeatures,
    t: *mut usize,
    d: *mut usize,
) -> TskStatus {
    let Some(f) = features.as_ref() else {
        return invalid("features is null");
    };
    if t.is_null() || d.is_null() {
        return invalid("t or d is null");
    }
    *t = f.0.t;
    *d = f.0.d;
    TskStatus::Ok
}

/// Frees a feature handle. NULL is a no-op.
///
/// # Safety
/// `features` must be NULL or an unfreed pointer from `tsk_features_read`.
#[no_mangle]
pub unsafe extern "C" fn tsk_features_free(features: *mut TskFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Loads a TSKM checkpoint into a new model handle stored in `out`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_load(
    path: *const c_char,
    out: *mut *mut TskModel,
) -> TskStatus {
    if out.is_null() {
        return invalid("out is null");
    }
    let Some(path) = path_arg(path) else {
        return invalid("path is null or not UTF-8");
    };
    match load_model(path) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(TskModel(model)));
            TskStatus::Ok
        }
        Err(err) => fail(&err),
    }
}

/// Creates a freshly initialized model from a JSON head config (the same
/// schema stored inside TSKM checkpoints) and a seed.
///
/// # Safety
/// `config_json` must be a NUL-terminated UTF-8 string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut TskModel,
) -> TskStatus {
    if out.is_null() {
        return invalid("out is null");
    }
    if config_json.is_null() {
        return invalid("config_json is null");
    }
    let Ok(text) = CStr::from_ptr(config_json).to_str() else {
        return invalid("config_json is not UTF-8");
    };
    let config: HeadConfig = match serde_json::from_str(text) {
        Ok(cfg) => cfg,
        Err(err) => return fail(&Error::Json(err)),
    };
    match Model::new(config, seed) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(TskModel(model)));
            TskStatus::Ok
        }
        Err(err) => fail(&err),
    }
}

/// Saves a model to a TSKM checkpoint file.
///
/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_save(
    model: *const TskModel,
    path: *const c_char,
) -> TskStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model is null");
    };
    let Some(path) = path_arg(path) else {
        return invalid("path is null or not UTF-8");
    };
    match save_model(path, &m.0) {
        Ok(()) => TskStatus::Ok,
        Err(err) => fail(&err),
    }
}

/// Total number of learnable parameters of a model.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_param_count(
    model: *const TskModel,
    out: *mut usize,
) -> TskStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model is null");
    };
    if out.is_null() {
        return invalid("out is null");
    }
    *out = count_parameters(&m.0.config);
    TskStatus::Ok
}

/// Number of output values of a forward pass over `t` frames: C for
/// segmented heads, T*C for continuous heads.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_output_len(
    model: *const TskModel,
    t: usize,
    out: *mut usize,
) -> TskStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model is null");
    };
    if out.is_null() {
        return invalid("out is null");
    }
    *out = output_len(&m.0, t);
    TskStatus::Ok
}

/// Runs a forward pass and writes the raw logits into `out`, which must
/// hold `tsk_model_output_len(model, features.t)` values.
///
/// # Safety
/// All pointers must be valid; `out` must point at `out_len` f64 slots.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_forward(
    model: *const TskModel,
    features: *const TskFeatures,
    out: *mut f64,
    out_len: usize,
) -> TskStatus {
    let Some(m) = model.as_ref() else {
        return invalid("model is null");
    };
    let Some(f) = features.as_ref() else {
        return invalid("features is null");
    };
    if out.is_null() {
        return invalid("out is null");
    }
    let expected = output_len(&m.0, f.0.t);
    if out_len != expected {
        return invalid("out_len does not match the model output length");
    }
    let tape = Tape::new();
    let leaves: Vec<Tensor> = m
        .0
        .params
        .iter()
        .map(|p| tape.constant(p.shape.clone(), p.data.clone()))
        .collect();
    let values: Vec<f64> = f.0.values.iter().map(|&v| v as f64).collect();
    let v = tape.constant(vec![f.0.t, f.0.d], values);
    match m.0.forward(&leaves, &v) {
        Ok(logits) => {
            let data = logits.to_vec();
            if data.len() != expected {
                set_error("unexpected output length");
                return TskStatus::Compute;
            }
            ptr::copy_nonoverlapping(data.as_ptr(), out, expected);
            TskStatus::Ok
        }
        Err(err) => fail(&err),
    }
}

/// Frees a model handle. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or an unfreed pointer from a model constructor.
#[no_mangle]
pub unsafe extern "C" fn tsk_model_free(model: *mut TskModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
