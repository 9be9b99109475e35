//! C ABI over the mad inference path.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`MadStatus`];
//! on failure the message is available from [`mad_last_error`] on the same
//! thread. Strings returned through out-parameters are UTF-8 JSON, owned by
//! the caller and released with [`mad_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use mad::model::persist::load_model;
use mad::model::Model;
use mad::serve::{model_info, ServingSession};
use mad::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MadStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    ModelFile = 4,
    HashMismatch = 5,
    EmptyUtterance = 6,
    Internal = 7,
    Panic = 8,
}

/// A loaded model. Shared by every session created from it.
pub struct MadModel {
    inner: Arc<Model<f32>>,
}

/// One conversation. Keeps its model alive.
pub struct MadSession {
    model: Arc<Model<f32>>,
    inner: ServingSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MadStatus, msg: &str) -> MadStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> MadStatus {
    let status = match e.kind() {
        "io" => MadStatus::Io,
        "model_file" => MadStatus::ModelFile,
        "hash_mismatch" => MadStatus::HashMismatch,
        "data" => MadStatus::EmptyUtterance,
        _ => MadStatus::Internal,
    };
    fail(status, &e.to_string())
}

/// Runs `f`, turning a panic into [`MadStatus::Panic`].
fn guard(f: impl FnOnce() -> MadStatus) -> MadStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(MadStatus::Panic, "internal panic"))
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MadStatus> {
    if p.is_null() {
        return Err(fail(MadStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MadStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn write_json(out: *mut *mut c_char, value: &impl serde::Serialize) -> MadStatus {
    match serde_json::to_string(value) {
        Ok(s) => {
            // serde_json escapes control characters, so the text has no interior nul.
            *out = CString::new(s).expect("json without nul").into_raw();
            MadStatus::Ok
        }
        Err(e) => fail(MadStatus::Internal, &e.to_string()),
    }
}

/// Loads a model file. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mad_model_load(path: *const c_char, out: *mut *mut MadModel) -> MadStatus {
    guard(|| {
        if out.is_null() {
            return fail(MadStatus::NullArgument, "null out pointer");
        }
        *out = ptr::null_mut();
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_model(Path::new(path), None) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(MadModel { inner: Arc::new(m) }));
                MadStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Releases a model handle. Sessions created from it stay usable.
///
/// # Safety
/// `model` must come from [`mad_model_load`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mad_model_free(model: *mut MadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model description (slots, act types, dimensions) as JSON.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mad_model_info(model: *const MadModel, out: *mut *mut c_char) -> MadStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MadStatus::NullArgument, "null argument");
        }
        write_json(out, &model_info(&(*model).inner))
    })
}

/// Starts a conversation with an empty memory state.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mad_session_new(model: *const MadModel, out: *mut *mut MadSession) -> MadStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(MadStatus::NullArgument, "null argument");
        }
        let model = (*model).inner.clone();
        let inner = ServingSession::new(&model);
        *out = Box::into_raw(Box::new(MadSession { model, inner }));
        MadStatus::Ok
    })
}

/// Releases a session handle.
///
/// # Safety
/// `session` must come from [`mad_session_new`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mad_session_free(session: *mut MadSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Advances the session by one user utterance and writes the turn result as
/// JSON. An utterance with no tokens yields [`MadStatus::EmptyUtterance`] and
/// leaves the session unchanged.
///
/// # Safety
/// `session` must be a live handle, `utterance` a nul-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mad_session_submit(
    session: *mut MadSession,
    utterance: *const c_char,
    out: *mut *mut c_char,
) -> MadStatus {
    guard(|| {
        if session.is_null() || out.is_null() {
            return fail(MadStatus::NullArgument, "null argument");
        }
        *out = ptr::null_mut();
        let utterance = match read_str(utterance) {
            Ok(u) => u,
            Err(s) => return s,
        };
        let s = &mut *session;
        match s.inner.submit(&s.model, utterance) {
            Ok(r) => write_json(out, &r),
            Err(e) => from_error(&e),
        }
    })
}

/// Writes every turn result of the session so far as a JSON array.
///
/// # Safety
/// `session` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mad_session_transcript(session: *const MadSession, out: *mut *mut c_char) -> MadStatus {
    guard(|| {
        if session.is_null() || out.is_null() {
            return fail(MadStatus::NullArgument, "null argument");
        }
        write_json(out, &(*session).inner.transcript)
    })
}

/// Clears the memory state and transcript.
///
/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mad_session_reset(session: *mut MadSession) -> MadStatus {
    guard(|| {
        if session.is_null() {
            return fail(MadStatus::NullArgument, "null argument");
        }
        let s = &mut *session;
        s.inner = ServingSession::new(&s.model);
        MadStatus::Ok
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mad_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn mad_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mad_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
