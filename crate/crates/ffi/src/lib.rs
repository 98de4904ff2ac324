//! C ABI over eventcl: load a trained checkpoint, embed events, compare them.
//!
//! Every fallible function returns an [`EventclStatus`]. On failure a
//! human-readable message is stored per thread and can be fetched with
//! [`eventcl_last_error`]. Panics never cross the boundary; they surface as
//! `EVENTCL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eventcl::augment::Event;
use eventcl::error::Error;
use eventcl::eval::{self, Embedder};
use eventcl::trainer::Model;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventclStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Checkpoint = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct EventclModel {
    model: Model,
}

/// One event as three NUL-terminated UTF-8 strings.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EventclEvent {
    pub subject: *const c_char,
    pub predicate: *const c_char,
    pub object: *const c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(EventclStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => EventclStatus::Io,
            Error::Checkpoint(_) | Error::Json(_) => EventclStatus::Checkpoint,
            Error::Numeric(_) | Error::Divergence { .. } => EventclStatus::Numeric,
            _ => EventclStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EventclStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EventclStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EventclStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(EventclStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EventclStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn model_ref<'a>(m: *const EventclModel) -> Result<&'a EventclModel, Failure> {
    m.as_ref()
        .ok_or_else(|| Failure(EventclStatus::NullPointer, "model handle is null".into()))
}

unsafe fn event(e: *const EventclEvent, what: &str) -> Result<Event, Failure> {
    let e = e
        .as_ref()
        .ok_or_else(|| Failure(EventclStatus::NullPointer, format!("{what} is null")))?;
    let s = text(e.subject, "subject")?;
    let p = text(e.predicate, "predicate")?;
    let o = text(e.object, "object")?;
    Ok(Event::new(s, p, o)?)
}

fn unit_embedding(model: &Model, e: &Event) -> Result<Vec<f64>, Failure> {
    Ok(eval::embed(e, model as &dyn Embedder)?)
}

/// Message for the most recent failure on this thread, or NULL after a success.
///
/// The pointer stays valid until the next eventcl call on the same thread.
#[no_mangle]
pub extern "C" fn eventcl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eventcl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `eventcl train`. On success `*out` owns a
/// handle that must be released with [`eventcl_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn eventcl_model_load(path: *const c_char, out: *mut *mut EventclModel) -> EventclStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(EventclStatus::NullPointer, "out is null".into()));
        }
        *out = std::ptr::null_mut();
        let path = text(path, "path")?;
        let model = Model::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(EventclModel { model }));
        Ok(())
    })
}

/// Releases a handle. NULL is accepted and ignored.
///
/// # Safety
/// `model` must come from [`eventcl_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn eventcl_model_free(model: *mut EventclModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding width of the model, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eventcl_model_dim(model: *const EventclModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.encoder.config.hidden_dim)
}

/// Writes the unit-length embedding of `event` into `out[0..dim]`.
///
/// # Safety
/// `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn eventcl_embed(
    model: *const EventclModel,
    event_in: *const EventclEvent,
    out: *mut f64,
    out_len: usize,
) -> EventclStatus {
    guard(|| {
        let m = model_ref(model)?;
        let e = event(event_in, "event")?;
        if out.is_null() {
            return Err(Failure(EventclStatus::NullPointer, "out is null".into()));
        }
        let dim = m.model.encoder.config.hidden_dim;
        if out_len < dim {
            return Err(Failure(
                EventclStatus::BufferTooSmall,
                format!("buffer holds {out_len} values but the embedding has {dim}"),
            ));
        }
        let v = unit_embedding(&m.model, &e)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&v);
        Ok(())
    })
}

/// Cosine similarity of two events under the model.
///
/// # Safety
/// All pointers must be valid; `out` receives the result.
#[no_mangle]
pub unsafe extern "C" fn eventcl_similarity(
    model: *const EventclModel,
    a: *const EventclEvent,
    b: *const EventclEvent,
    out: *mut f64,
) -> EventclStatus {
    guard(|| {
        let m = model_ref(model)?;
        let (a, b) = (event(a, "first event")?, event(b, "second event")?);
        if out.is_null() {
            return Err(Failure(EventclStatus::NullPointer, "out is null".into()));
        }
        let (va, vb) = (unit_embedding(&m.model, &a)?, unit_embedding(&m.model, &b)?);
        *out = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        Ok(())
    })
}
