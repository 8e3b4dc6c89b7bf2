//! C interface to miivgraph. Models live behind an opaque handle; results
//! come back as JSON strings owned by the library.
//!
//! Every function returns a [`MiivStatus`]. On failure the message is kept
//! per thread and read with [`miiv_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use miivgraph::identify::{identify_model, IdConfig};
use miivgraph::model::{equation_of, validate, SemModel};
use miivgraph::parser::parse_model;
use miivgraph::transform::l2o;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiivStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidModel = 4,
    UnknownVariable = 5,
    TransformFailed = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct MiivModel {
    model: SemModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MiivStatus, msg: impl Into<String>) -> MiivStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MiivStatus) -> MiivStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(MiivStatus::Panic, "internal panic"))
}

unsafe fn input<'a>(s: *const c_char) -> Result<&'a str, MiivStatus> {
    if s.is_null() {
        return Err(fail(MiivStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(MiivStatus::InvalidUtf8, "argument is not UTF-8"))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> MiivStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            MiivStatus::Ok
        }
        Err(_) => fail(MiivStatus::Panic, "output contains a NUL byte"),
    }
}

unsafe fn put_model(out: *mut *mut MiivModel, model: SemModel) -> MiivStatus {
    let violations = validate(&model);
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return fail(MiivStatus::InvalidModel, msg.join("; "));
    }
    *out = Box::into_raw(Box::new(MiivModel { model }));
    MiivStatus::Ok
}

/// Parses model syntax into a new handle stored in `*out`.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn miiv_model_parse(src: *const c_char, out: *mut *mut MiivModel) -> MiivStatus {
    guard(|| {
        if out.is_null() {
            return fail(MiivStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let text = match input(src) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_model(text) {
            Ok(m) => put_model(out, m),
            Err(diags) => {
                let msg: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
                fail(MiivStatus::ParseError, msg.join("\n"))
            }
        }
    })
}

/// Reads a model from its JSON interchange form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn miiv_model_from_json(json: *const c_char, out: *mut *mut MiivModel) -> MiivStatus {
    guard(|| {
        if out.is_null() {
            return fail(MiivStatus::NullArgument, "null output pointer");
        }
        *out = ptr::null_mut();
        let text = match input(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match SemModel::from_json_str(text) {
            Ok(m) => put_model(out, m),
            Err(e) => fail(MiivStatus::ParseError, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn miiv_model_free(model: *mut MiivModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// JSON interchange form of the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer. Free the
/// result with [`miiv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn miiv_model_to_json(model: *const MiivModel, out: *mut *mut c_char) -> MiivStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MiivStatus::NullArgument, "null argument");
        }
        put_string(out, (*model).model.to_json_string())
    })
}

/// Identification report as JSON. Zero caps select the defaults.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer. Free the
/// result with [`miiv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn miiv_identify_json(
    model: *const MiivModel,
    max_sets: usize,
    max_cond: usize,
    out: *mut *mut c_char,
) -> MiivStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MiivStatus::NullArgument, "null argument");
        }
        let mut cfg = IdConfig::default();
        if max_sets > 0 {
            cfg.max_sets = max_sets;
        }
        if max_cond > 0 {
            cfg.max_cond = max_cond;
        }
        let report = identify_model(&(*model).model, &cfg);
        match serde_json::to_string(&report) {
            Ok(s) => put_string(out, s),
            Err(e) => fail(MiivStatus::Panic, e.to_string()),
        }
    })
}

/// Regression and provenance of the full transform of one equation, as
/// JSON.
///
/// # Safety
/// `model` must be a live handle, `equation` a NUL-terminated string and
/// `out` a valid pointer. Free the result with [`miiv_string_free`].
#[no_mangle]
pub unsafe extern "C" fn miiv_transform_json(
    model: *const MiivModel,
    equation: *const c_char,
    out: *mut *mut c_char,
) -> MiivStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MiivStatus::NullArgument, "null argument");
        }
        let name = match input(equation) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let m = &(*model).model;
        let g = &m.diagram;
        let Some(v) = g.find(name) else {
            return fail(MiivStatus::UnknownVariable, format!("unknown variable `{name}`"));
        };
        let outcome = match equation_of(m, v).map_err(|e| e.to_string()).and_then(|eq| l2o(m, &eq).map_err(|e| e.to_string())) {
            Ok(o) => o,
            Err(e) => return fail(MiivStatus::TransformFailed, e),
        };
        let provenance: Vec<serde_json::Value> = outcome
            .provenance
            .iter()
            .map(|p| {
                serde_json::json!({
                    "regressor": g.name(p.source),
                    "param": p.param.label,
                    "combination": p.combination.to_string(),
                    "aliased": p.is_aliased(),
                })
            })
            .collect();
        let value = serde_json::json!({
            "dependent": g.name(outcome.regression.dependent),
            "regressors": g.names(outcome.regression.regressors.iter().copied()),
            "provenance": provenance,
        });
        put_string(out, value.to_string())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn miiv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn miiv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
