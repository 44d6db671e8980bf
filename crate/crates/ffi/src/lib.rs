//! C ABI over the madsa runtime.
//!
//! Handles are opaque and owned by the caller, who must release them with the
//! matching `*_free` function. Every fallible call returns a [`MadsaStatus`];
//! on failure a description is available from [`madsa_last_error`] on the same
//! thread until the next failing call. Strings returned through `char **`
//! out-parameters are JSON, NUL-terminated, and released with
//! [`madsa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use madsa_core::assessor::AssessorModel;
use madsa_core::dialogue::{DialogueConfig, DialogueModel};
use madsa_core::metrics::{detect_depression, qwk};
use madsa_core::synthesis::PhqBank;
use madsa_core::system::{InductiveSystem, Session};
use madsa_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MadsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Numeric = 4,
    Io = 5,
    Checkpoint = 6,
    Panic = 7,
}

/// A loaded dialogue model, assessor and PHQ bank.
pub struct MadsaSystem {
    inner: InductiveSystem,
}

/// One conversation with a [`MadsaSystem`].
pub struct MadsaSession {
    inner: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(e: &Error) -> MadsaStatus {
    match e.root() {
        Error::Numeric(_) => MadsaStatus::Numeric,
        Error::Io { .. } => MadsaStatus::Io,
        Error::Checkpoint(_) => MadsaStatus::Checkpoint,
        _ => MadsaStatus::InvalidInput,
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (MadsaStatus, String)>) -> MadsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MadsaStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside madsa".into());
            MadsaStatus::Panic
        }
    }
}

fn core(e: Error) -> (MadsaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (MadsaStatus, String) {
    (MadsaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (MadsaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (MadsaStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn json_out(value: serde_json::Result<serde_json::Value>, out: *mut *mut c_char) -> Result<(), (MadsaStatus, String)> {
    let text = value.map_err(|e| core(e.into()))?.to_string();
    let text = CString::new(text).map_err(|e| (MadsaStatus::InvalidInput, e.to_string()))?;
    unsafe { *out = text.into_raw() };
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn madsa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a system from checkpoints written by `madsa train`. `phq_bank` may
/// be null for the bundled questionnaire.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn madsa_system_load(
    dialogue_checkpoint: *const c_char,
    assessor_checkpoint: *const c_char,
    phq_bank: *const c_char,
    out: *mut *mut MadsaSystem,
) -> MadsaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dialogue_path = str_arg(dialogue_checkpoint, "dialogue_checkpoint")?;
        let assessor_path = str_arg(assessor_checkpoint, "assessor_checkpoint")?;
        let bank = if phq_bank.is_null() {
            PhqBank::standard()
        } else {
            PhqBank::load(str_arg(phq_bank, "phq_bank")?).map_err(core)?
        };
        let dialogue = DialogueModel::load(dialogue_path, &DialogueConfig::default()).map_err(core)?;
        let assessor = AssessorModel::load(assessor_path, 0.0).map_err(core)?;
        let inner = InductiveSystem::new(dialogue, assessor, bank).map_err(core)?;
        *out = Box::into_raw(Box::new(MadsaSystem { inner }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from [`madsa_system_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn madsa_system_free(system: *mut MadsaSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

#[no_mangle]
pub extern "C" fn madsa_session_new() -> *mut MadsaSession {
    Box::into_raw(Box::new(MadsaSession { inner: Session::new() }))
}

/// # Safety
/// `session` must come from [`madsa_session_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn madsa_session_free(session: *mut MadsaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Number of turns (user and system) in the session, or 0 for null.
///
/// # Safety
/// `session` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn madsa_session_turns(session: *const MadsaSession) -> usize {
    session.as_ref().map_or(0, |s| s.inner.turns().len())
}

/// Sends one user message. On success `*out_json` holds
/// `{"response", "gate", "turn_index"}`. The session is unchanged on error.
///
/// # Safety
/// Handles must be live; `text` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn madsa_session_message(
    system: *const MadsaSystem,
    session: *mut MadsaSession,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> MadsaStatus {
    guard(|| {
        let system = system.as_ref().ok_or_else(|| null("system"))?;
        let session = session.as_mut().ok_or_else(|| null("session"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let text = str_arg(text, "text")?;
        let outcome = system.inner.message(&mut session.inner, text).map_err(core)?;
        json_out(serde_json::to_value(&outcome), out_json)
    })
}

/// Severity report for the session so far as JSON. Never changes the session.
///
/// # Safety
/// Handles must be live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn madsa_session_assess(
    system: *const MadsaSystem,
    session: *const MadsaSession,
    out_json: *mut *mut c_char,
) -> MadsaStatus {
    guard(|| {
        let system = system.as_ref().ok_or_else(|| null("system"))?;
        let session = session.as_ref().ok_or_else(|| null("session"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let report = system.inner.assess(&session.inner).map_err(core)?;
        json_out(serde_json::to_value(&report), out_json)
    })
}

/// Writes the session transcript as JSON lines to `path`.
///
/// # Safety
/// `session` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn madsa_session_save_transcript(session: *const MadsaSession, path: *const c_char) -> MadsaStatus {
    guard(|| {
        let session = session.as_ref().ok_or_else(|| null("session"))?;
        let path = str_arg(path, "path")?;
        session.inner.save_transcript(path.as_ref()).map_err(core)
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn madsa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// PHQ-8 screening rule: `*out` is true when the eight scores sum to 10 or
/// more.
///
/// # Safety
/// `scores` must point to 8 bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn madsa_detect_depression(scores: *const u8, out: *mut bool) -> MadsaStatus {
    guard(|| {
        if scores.is_null() || out.is_null() {
            return Err(null("scores or out"));
        }
        *out = detect_depression(std::slice::from_raw_parts(scores, 8)).map_err(core)?;
        Ok(())
    })
}

/// Quadratic weighted kappa of `n` ratings on `levels` ordinal levels.
///
/// # Safety
/// `y` and `y_hat` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn madsa_qwk(y: *const usize, y_hat: *const usize, n: usize, levels: usize, out: *mut f64) -> MadsaStatus {
    guard(|| {
        if y.is_null() || y_hat.is_null() || out.is_null() {
            return Err(null("y, y_hat or out"));
        }
        let (y, y_hat) = (std::slice::from_raw_parts(y, n), std::slice::from_raw_parts(y_hat, n));
        *out = qwk(y, y_hat, levels).map_err(core)?;
        Ok(())
    })
}
