//! C ABI over the `ole` crate.
//!
//! Conventions:
//! - Every fallible function returns an [`OleStatus`]; results come back
//!   through out-pointers that are written only on success.
//! - Matrices and networks are opaque heap handles. Anything returned
//!   through an out-pointer is owned by the caller and must be released with
//!   the matching `*_free` function.
//! - Matrices are row-major. Feature matrices are D×N with one sample per
//!   column.
//! - After a failure, [`ole_last_error_message`] describes it. The message
//!   is thread-local and stays valid until the next call on the same thread.
//! - Panics never cross the boundary; they are reported as
//!   [`OleStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ole::linalg::{self, LinalgError, Matrix};
use ole::network::{load_checkpoint, CheckpointError, Mode, Network, NetworkError};
use ole::ole_loss::{ole_value_and_grad, FeatureBatch, LossError, OleConfig};
use ole::softmax::{softmax_cross_entropy, LogitsBatch};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OleStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Shapes, labels, thresholds or other arguments are invalid.
    InvalidArgument = 2,
    /// The SVD did not converge.
    Decomposition = 3,
    /// A file could not be read.
    Io = 4,
    /// A file was read but its contents are malformed.
    Format = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// Opaque row-major matrix of doubles.
pub struct OleMatrix {
    inner: Matrix,
}

/// Opaque trained network loaded from a checkpoint.
pub struct OleNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

type Failure = (OleStatus, String);

fn linalg_status(e: &LinalgError) -> OleStatus {
    match e {
        LinalgError::NoConvergence { .. } => OleStatus::Decomposition,
        _ => OleStatus::InvalidArgument,
    }
}

fn from_linalg(e: LinalgError) -> Failure {
    (linalg_status(&e), e.to_string())
}

fn from_loss(e: LossError) -> Failure {
    let status = match &e {
        LossError::Linalg(inner) => linalg_status(inner),
        _ => OleStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn from_network(e: NetworkError) -> Failure {
    let status = match &e {
        NetworkError::Linalg(inner) => linalg_status(inner),
        _ => OleStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn from_checkpoint(e: CheckpointError) -> Failure {
    let status = match &e {
        CheckpointError::Io(_) => OleStatus::Io,
        _ => OleStatus::Format,
    };
    (status, e.to_string())
}

fn null(what: &str) -> Failure {
    (OleStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OleStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            OleStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            OleStatus::Panic
        }
    }
}

unsafe fn matrix_ref<'a>(m: *const OleMatrix, what: &str) -> Result<&'a Matrix, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null(what))
}

unsafe fn slice_or_null<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed(m: Matrix) -> *mut OleMatrix {
    Box::into_raw(Box::new(OleMatrix { inner: m }))
}

/// Description of the last failure on this thread ("" after a success).
#[no_mangle]
pub extern "C" fn ole_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static, human-readable name of a status code.
#[no_mangle]
pub extern "C" fn ole_status_string(status: OleStatus) -> *const c_char {
    let s: &'static CStr = match status {
        OleStatus::Ok => c"ok",
        OleStatus::NullPointer => c"null pointer",
        OleStatus::InvalidArgument => c"invalid argument",
        OleStatus::Decomposition => c"decomposition failed",
        OleStatus::Io => c"i/o error",
        OleStatus::Format => c"malformed file",
        OleStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ole_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a `rows`×`cols` matrix from `rows*cols` row-major values, or a
/// zero matrix when `data` is null.
///
/// # Safety
/// `data` must be null or point to `rows*cols` readable doubles; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut OleMatrix,
) -> OleStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or((OleStatus::InvalidArgument, "matrix size overflows".to_string()))?;
        let m = if data.is_null() {
            Matrix::zeros(rows, cols)
        } else {
            let values = slice_or_null(data, len, "data")?.to_vec();
            Matrix::new(rows, cols, values).map_err(from_linalg)?
        };
        *out = boxed(m);
        Ok(())
    })
}

/// Releases a matrix. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_free(m: *mut OleMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_rows(m: *const OleMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.rows())
}

/// Column count, or 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_cols(m: *const OleMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.cols())
}

/// Borrowed pointer to the row-major values, valid while `m` lives and is
/// not modified. Null for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_data(m: *const OleMatrix) -> *const f64 {
    m.as_ref().map_or(ptr::null(), |m| m.inner.as_slice().as_ptr())
}

/// Copies the row-major values into `out`, which must hold `len` doubles
/// with `len == rows*cols`.
///
/// # Safety
/// `m` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ole_matrix_copy_data(m: *const OleMatrix, out: *mut f64, len: usize) -> OleStatus {
    guard(|| {
        let m = matrix_ref(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let src = m.as_slice();
        if len != src.len() {
            return Err((
                OleStatus::InvalidArgument,
                format!("buffer holds {len} values, matrix has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, len);
        Ok(())
    })
}

/// Sum of singular values.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ole_nuclear_norm(m: *const OleMatrix, out: *mut f64) -> OleStatus {
    guard(|| {
        let m = matrix_ref(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = linalg::nuclear_norm(m).map_err(from_linalg)?;
        Ok(())
    })
}

/// Projected subgradient `U1·V1ᵀ` over singular values above `sv_threshold`.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ole_nuclear_subgradient(
    m: *const OleMatrix,
    sv_threshold: f64,
    out: *mut *mut OleMatrix,
) -> OleStatus {
    guard(|| {
        let m = matrix_ref(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = boxed(linalg::nuclear_subgradient(m, sv_threshold).map_err(from_linalg)?);
        Ok(())
    })
}

/// Embedding loss of D×N `features` with one label per column. Writes the
/// value to `out_value` and, when `out_grad` is not null, the D×N gradient.
///
/// # Safety
/// `features` must be a live handle, `labels` must point to `n_labels`
/// values, `out_value` must be valid, and `out_grad` null or valid.
#[no_mangle]
pub unsafe extern "C" fn ole_loss(
    features: *const OleMatrix,
    labels: *const usize,
    n_labels: usize,
    class_count: usize,
    delta_clamp: f64,
    sv_threshold: f64,
    out_value: *mut f64,
    out_grad: *mut *mut OleMatrix,
) -> OleStatus {
    guard(|| {
        let x = matrix_ref(features, "features")?;
        let labels = slice_or_null(labels, n_labels, "labels")?;
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let cfg = OleConfig {
            delta_clamp,
            sv_threshold,
        };
        let batch = FeatureBatch::new(x.clone(), labels.to_vec(), class_count).map_err(from_loss)?;
        let (value, grad) = ole_value_and_grad(&batch, &cfg).map_err(from_loss)?;
        *out_value = value;
        if !out_grad.is_null() {
            *out_grad = boxed(grad);
        }
        Ok(())
    })
}

/// Mean softmax cross-entropy of C×N `logits`; optional C×N gradient.
///
/// # Safety
/// As for [`ole_loss`].
#[no_mangle]
pub unsafe extern "C" fn ole_softmax_cross_entropy(
    logits: *const OleMatrix,
    labels: *const usize,
    n_labels: usize,
    out_value: *mut f64,
    out_grad: *mut *mut OleMatrix,
) -> OleStatus {
    guard(|| {
        let z = matrix_ref(logits, "logits")?;
        let labels = slice_or_null(labels, n_labels, "labels")?;
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let batch = LogitsBatch::new(z.clone(), labels.to_vec()).map_err(from_loss)?;
        let (value, grad) = softmax_cross_entropy(&batch).map_err(from_loss)?;
        *out_value = value;
        if !out_grad.is_null() {
            *out_grad = boxed(grad);
        }
        Ok(())
    })
}

/// Loads a checkpoint written by `ole train`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ole_network_load(path: *const c_char, out: *mut *mut OleNetwork) -> OleStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (OleStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let net = load_checkpoint(Path::new(path)).map_err(from_checkpoint)?;
        *out = Box::into_raw(Box::new(OleNetwork { inner: net }));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ole_network_free(net: *mut OleNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Input, feature and class dimensions. Any out-pointer may be null.
///
/// # Safety
/// `net` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ole_network_dims(
    net: *const OleNetwork,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    class_count: *mut usize,
) -> OleStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        let spec = net.inner.spec();
        for (p, v) in [
            (input_dim, spec.input_dim),
            (feature_dim, spec.feature_dim),
            (class_count, spec.class_count),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Inference-mode forward pass of `input` (input_dim×N). Writes the D×N
/// features and C×N logits to whichever out-pointers are not null.
///
/// # Safety
/// `net` and `input` must be live handles; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ole_network_forward(
    net: *const OleNetwork,
    input: *const OleMatrix,
    out_features: *mut *mut OleMatrix,
    out_logits: *mut *mut OleMatrix,
) -> OleStatus {
    guard(|| {
        let net = net.as_ref().ok_or_else(|| null("network"))?;
        let x = matrix_ref(input, "input")?;
        let trace = net.inner.forward(x, Mode::Eval).map_err(from_network)?;
        if !out_features.is_null() {
            *out_features = boxed(trace.features().clone());
        }
        if !out_logits.is_null() {
            *out_logits = boxed(trace.logits().clone());
        }
        Ok(())
    })
}
