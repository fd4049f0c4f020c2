//! C interface to checkpoint loading, parsing and the structure algorithms.
//!
//! Every fallible function returns a [`StructlabStatus`]; on failure the
//! message is kept per thread and read with [`structlab_last_error`].
//! Arrays are caller-allocated. Parents are 0-based with -1 for the root.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use structlab::checkpoint::Checkpoint;
use structlab::corpus::Vocab;
use structlab::depdist::parent_dist;
use structlab::eval::predict;
use structlab::model::Model;
use structlab::structures::{joint_parse, SyntacticDistances, SyntacticHeights};
use structlab::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructlabStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    NullArgument = 1,
    /// Bad sizes, configuration or input values.
    InvalidInput = 2,
    /// File access or parse failure.
    Io = 3,
    /// Missing or corrupt checkpoint.
    Checkpoint = 4,
    /// Non-finite values.
    Numerical = 5,
    /// An output buffer is too small; the required length was written.
    BufferTooSmall = 6,
    /// Internal error.
    Panic = 7,
}

/// Opaque model handle.
pub struct StructlabModel {
    model: Model<f64>,
    vocab: Vocab,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> StructlabStatus {
    match e {
        Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => StructlabStatus::Io,
        Error::Checkpoint(_) => StructlabStatus::Checkpoint,
        Error::Numerical(_) => StructlabStatus::Numerical,
        _ => StructlabStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (StructlabStatus, String)>) -> StructlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            StructlabStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StructlabStatus::Panic
        }
    }
}

fn lift(e: Error) -> (StructlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StructlabStatus, String) {
    (StructlabStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (StructlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (StructlabStatus::NullArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (StructlabStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], (StructlabStatus, String)> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn parent_code(p: Option<usize>) -> i64 {
    p.map_or(-1, |p| p as i64)
}

/// Copies the last error of this thread into `buf` as a NUL-terminated
/// string, truncating to `len - 1` bytes. Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn structlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a checkpoint; parameters are widened to 64-bit floats.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn structlab_model_load(path: *const c_char, out: *mut *mut StructlabModel) -> StructlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let ckpt = Checkpoint::<f64>::load(path).map_err(lift)?;
        let vocab = Vocab::from_tokens(ckpt.vocab).map_err(lift)?;
        *out = Box::into_raw(Box::new(StructlabModel { model: ckpt.model, vocab }));
        Ok(())
    })
}

/// Releases a handle from [`structlab_model_load`]; null is ignored.
///
/// # Safety
/// `model` must come from [`structlab_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn structlab_model_free(model: *mut StructlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Vocabulary size including the reserved entries; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn structlab_model_vocab_size(model: *const StructlabModel) -> usize {
    model.as_ref().map_or(0, |m| m.vocab.len())
}

/// Parses one whitespace-tokenized sentence. Unknown words map to `<unk>`.
///
/// `n_tokens` receives the sentence length. When `capacity` is smaller,
/// nothing else is written and `BufferTooSmall` is returned. Otherwise
/// `parents` gets `n` entries, `tau` gets `n - 1` and `delta` gets `n`;
/// `tau` and `delta` may be null.
///
/// # Safety
/// Pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn structlab_parse(
    model: *const StructlabModel,
    sentence: *const c_char,
    capacity: usize,
    n_tokens: *mut usize,
    parents: *mut i64,
    tau: *mut f64,
    delta: *mut f64,
) -> StructlabStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let sentence = str_arg(sentence, "sentence")?;
        if n_tokens.is_null() {
            return Err(null("n_tokens"));
        }
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let n = words.len();
        *n_tokens = n;
        if n == 0 {
            return Err((StructlabStatus::InvalidInput, "sentence has no tokens".into()));
        }
        if capacity < n {
            return Err((StructlabStatus::BufferTooSmall, format!("{n} tokens exceed capacity {capacity}")));
        }
        let out_parents = out_arg(parents, n, "parents")?;
        let pred = predict(&m.model, &[m.vocab.encode(&words)], 1).map_err(lift)?.remove(0);
        for (o, p) in out_parents.iter_mut().zip(&pred.parents) {
            *o = parent_code(*p);
        }
        if !tau.is_null() {
            out_arg(tau, n - 1, "tau")?.copy_from_slice(&pred.tau);
        }
        if !delta.is_null() {
            out_arg(delta, n, "delta")?.copy_from_slice(&pred.delta);
        }
        Ok(())
    })
}

/// Dependencies of the joint parse of distances and heights:
/// `tau` has `n - 1` entries, `delta` and `parents` have `n`.
///
/// # Safety
/// Pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn structlab_joint_parse(tau: *const f64, delta: *const f64, n: usize, parents: *mut i64) -> StructlabStatus {
    guard(|| {
        if n == 0 {
            return Err((StructlabStatus::InvalidInput, "empty sentence".into()));
        }
        let tau = slice_arg(tau, n - 1, "tau")?;
        let delta = slice_arg(delta, n, "delta")?;
        let out = out_arg(parents, n, "parents")?;
        let words = vec![(); n];
        let parse = joint_parse(&words, &SyntacticDistances(tau.to_vec()), &SyntacticHeights(delta.to_vec())).map_err(lift)?;
        for (o, p) in out.iter_mut().zip(parse.dependencies.parents()) {
            *o = parent_code(*p);
        }
        Ok(())
    })
}

/// Differentiable parent distribution as a row-major `n x n` matrix:
/// entry `(i, j)` is the probability that `j` is the parent of `i`.
///
/// # Safety
/// `tau` has `n - 1` entries, `delta` has `n`, `out` has `n * n`.
#[no_mangle]
pub unsafe extern "C" fn structlab_parent_distribution(
    tau: *const f64,
    delta: *const f64,
    n: usize,
    mu1: f64,
    mu2: f64,
    out: *mut f64,
) -> StructlabStatus {
    guard(|| {
        if n == 0 {
            return Err((StructlabStatus::InvalidInput, "empty sentence".into()));
        }
        let tau = slice_arg(tau, n - 1, "tau")?;
        let delta = slice_arg(delta, n, "delta")?;
        let out = out_arg(out, n * n, "out")?;
        let p = parent_dist(tau, delta, mu1, mu2).map_err(lift)?;
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}
