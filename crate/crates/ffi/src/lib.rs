//! C ABI over [`tegaarec::recommend::Recommender`].
//!
//! Every function returns a [`TegaaStatus`]. On failure the message is kept
//! per thread and can be read with [`tegaarec_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use tegaarec::cli::CliError;
use tegaarec::recommend::{RecommendError, Recommender};

/// Status codes. 2, 3 and 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TegaaStatus {
    Ok = 0,
    NullArgument = 1,
    UserError = 2,
    DataError = 3,
    NumericError = 4,
    BufferTooSmall = 5,
    Panic = 99,
}

/// Opaque handle to a loaded workdir and model.
pub struct TegaaRecommender {
    inner: Recommender,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: TegaaStatus, message: impl Into<String>) -> TegaaStatus {
    set_error(message);
    status
}

fn from_recommend(err: RecommendError) -> TegaaStatus {
    let cli = CliError::from(err);
    let status = match cli.code {
        2 => TegaaStatus::UserError,
        4 => TegaaStatus::NumericError,
        _ => TegaaStatus::DataError,
    };
    fail(status, cli.message)
}

fn guard(f: impl FnOnce() -> TegaaStatus) -> TegaaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(TegaaStatus::Panic, format!("panic: {msg}"))
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn ids<'a>(ptr: *const u64, len: usize) -> Option<&'a [u64]> {
    match (ptr.is_null(), len) {
        (_, 0) => Some(&[]),
        (true, _) => None,
        (false, _) => Some(slice::from_raw_parts(ptr, len)),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tegaarec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tegaarec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opens a trained workdir. On success `*out` owns a handle that must be
/// released with [`tegaarec_free`].
///
/// # Safety
/// `workdir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tegaarec_open(workdir: *const c_char, out: *mut *mut TegaaRecommender) -> TegaaStatus {
    guard(|| {
        if workdir.is_null() || out.is_null() {
            return fail(TegaaStatus::NullArgument, "workdir and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(dir) = CStr::from_ptr(workdir).to_str() else {
            return fail(TegaaStatus::UserError, "workdir is not valid UTF-8");
        };
        match Recommender::open(Path::new(dir), None) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TegaaRecommender { inner }));
                TegaaStatus::Ok
            }
            Err(e) => from_recommend(e),
        }
    })
}

/// Ranks the catalogue for the item after `items`. `context` items only
/// influence neighbour mining and may be null when `context_len` is 0.
///
/// Writes up to `capacity` results in rank order into `out_items` (raw item
/// ids) and `out_scores`, and the number written into `*out_len`. Fewer than
/// `k` rows are returned when the catalogue is smaller than `k`; a `capacity`
/// below that count is [`TegaaStatus::BufferTooSmall`] with `*out_len` set to
/// the required size.
///
/// # Safety
/// `handle` must come from [`tegaarec_open`]. Array pointers must be valid for
/// the given lengths; `out_scores` may be null.
#[no_mangle]
pub unsafe extern "C" fn tegaarec_recommend(
    handle: *const TegaaRecommender,
    user: u64,
    items: *const u64,
    items_len: usize,
    context: *const u64,
    context_len: usize,
    k: usize,
    out_items: *mut u64,
    out_scores: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> TegaaStatus {
    guard(|| {
        if handle.is_null() || out_len.is_null() || (capacity > 0 && out_items.is_null()) {
            return fail(TegaaStatus::NullArgument, "handle, out_items and out_len must not be null");
        }
        *out_len = 0;
        let (Some(items), Some(context)) = (ids(items, items_len), ids(context, context_len)) else {
            return fail(TegaaStatus::NullArgument, "item arrays must not be null when their length is nonzero");
        };
        let recs = match (*handle).inner.recommend(user, items, context, k, None) {
            Ok(r) => r,
            Err(e) => return from_recommend(e),
        };
        *out_len = recs.len();
        if recs.len() > capacity {
            return fail(
                TegaaStatus::BufferTooSmall,
                format!("{} results do not fit in capacity {capacity}", recs.len()),
            );
        }
        for (i, r) in recs.iter().enumerate() {
            *out_items.add(i) = r.raw_item;
            if !out_scores.is_null() {
                *out_scores.add(i) = r.score;
            }
        }
        TegaaStatus::Ok
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`tegaarec_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tegaarec_free(handle: *mut TegaaRecommender) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
