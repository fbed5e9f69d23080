//! C ABI over `cl2cm-core`.
//!
//! Every fallible function returns a [`Cl2cmStatus`]; on failure the message
//! is kept per thread and read back with [`cl2cm_last_error_message`].
//! Matrices are dense row-major `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cl2cm_core::alignkit;
use cl2cm_core::encoders::{self, Language, ModelParams};
use cl2cm_core::evalkit::{self, Direction};
use cl2cm_core::numkit::{Matrix, Vector};
use cl2cm_core::sinkhorn::{self, OtConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cl2cmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Sinkhorn hit its iteration cap; outputs are still written.
    NotConverged = 3,
    Numeric = 4,
    Checkpoint = 5,
    Panic = 6,
}

/// Retrieval metrics for one direction, all in percent.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Cl2cmMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map: f64,
}

/// Loaded encoder parameters.
pub struct Cl2cmModel {
    params: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: Cl2cmStatus, msg: impl Into<String>) -> Cl2cmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Cl2cmStatus) -> Cl2cmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(Cl2cmStatus::Panic, "internal panic"),
    }
}

unsafe fn matrix_from_raw(data: *const f64, rows: usize, cols: usize) -> Result<Matrix, Cl2cmStatus> {
    if data.is_null() {
        return Err(fail(Cl2cmStatus::NullPointer, "matrix pointer is null"));
    }
    if rows == 0 || cols == 0 {
        return Err(fail(Cl2cmStatus::InvalidArgument, "matrix has a zero dimension"));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(Cl2cmStatus::InvalidArgument, "matrix size overflows"))?;
    let slice = std::slice::from_raw_parts(data, n);
    Matrix::new(rows, cols, slice.to_vec()).map_err(|e| fail(Cl2cmStatus::InvalidArgument, e.to_string()))
}

unsafe fn write_out(dst: *mut f64, src: &[f64]) {
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Entropic OT plan of a `rows`×`cols` similarity matrix.
///
/// Non-positive `epsilon`, zero `max_iterations` or non-positive `tolerance`
/// select the defaults (0.1, 500, 1e-6).
///
/// # Safety
/// `similarity` and `plan_out` must hold `rows * cols` doubles;
/// `iterations_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_sinkhorn(
    similarity: *const f64,
    rows: usize,
    cols: usize,
    epsilon: f64,
    max_iterations: usize,
    tolerance: f64,
    plan_out: *mut f64,
    iterations_out: *mut usize,
) -> Cl2cmStatus {
    guard(|| {
        if plan_out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "plan_out is null");
        }
        let s = match matrix_from_raw(similarity, rows, cols) {
            Ok(m) => m,
            Err(st) => return st,
        };
        let d = OtConfig::default();
        let cfg = OtConfig {
            epsilon_entropy: if epsilon > 0.0 { epsilon } else { d.epsilon_entropy },
            max_iterations: if max_iterations > 0 { max_iterations } else { d.max_iterations },
            marginal_tolerance: if tolerance > 0.0 { tolerance } else { d.marginal_tolerance },
        };
        match sinkhorn::sinkhorn_solve(&s, &cfg) {
            Ok(plan) => {
                write_out(plan_out, plan.plan.data());
                if !iterations_out.is_null() {
                    *iterations_out = plan.iterations_used;
                }
                if plan.converged {
                    Cl2cmStatus::Ok
                } else {
                    fail(
                        Cl2cmStatus::NotConverged,
                        format!("marginal error {:e} after {} iterations", plan.final_marginal_error, plan.iterations_used),
                    )
                }
            }
            Err(sinkhorn::SinkhornError::InvalidConfig(m)) => fail(Cl2cmStatus::InvalidArgument, m),
            Err(e) => fail(Cl2cmStatus::Numeric, e.to_string()),
        }
    })
}

/// Thresholded, row-normalized pseudo-labels of a transport plan.
///
/// # Safety
/// `plan` and `labels_out` must hold `rows * cols` doubles; `gamma_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_pseudo_labels(
    plan: *const f64,
    rows: usize,
    cols: usize,
    labels_out: *mut f64,
    gamma_out: *mut f64,
) -> Cl2cmStatus {
    guard(|| {
        if labels_out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "labels_out is null");
        }
        let p = match matrix_from_raw(plan, rows, cols) {
            Ok(m) => m,
            Err(st) => return st,
        };
        let labels = alignkit::pseudo_labels_with_mode(&p, alignkit::ThresholdMode::Above);
        write_out(labels_out, labels.labels.data());
        if !gamma_out.is_null() {
            *gamma_out = labels.threshold_used;
        }
        Cl2cmStatus::Ok
    })
}

/// R@1/5/10 and mAP from 1-based gold ranks.
///
/// # Safety
/// `ranks` must hold `count` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_metrics(ranks: *const usize, count: usize, out: *mut Cl2cmMetrics) -> Cl2cmStatus {
    guard(|| {
        if ranks.is_null() || out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "ranks or out is null");
        }
        let r = std::slice::from_raw_parts(ranks, count);
        match evalkit::compute_metrics(r, Direction::TextToVision) {
            Ok(m) => {
                *out = Cl2cmMetrics {
                    r1: m.r1,
                    r5: m.r5,
                    r10: m.r10,
                    map: m.map_score,
                };
                Cl2cmStatus::Ok
            }
            Err(e) => fail(Cl2cmStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads a checkpoint directory (or its manifest path).
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_load(path: *const c_char, out: *mut *mut Cl2cmModel) -> Cl2cmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "path or out is null");
        }
        *out = ptr::null_mut();
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(Cl2cmStatus::InvalidArgument, "path is not UTF-8");
        };
        match encoders::load_checkpoint(Path::new(p)) {
            Ok((params, _)) => {
                *out = Box::into_raw(Box::new(Cl2cmModel { params }));
                Cl2cmStatus::Ok
            }
            Err(e) => fail(Cl2cmStatus::Checkpoint, e.to_string()),
        }
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`cl2cm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_free(model: *mut Cl2cmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Width of the shared embedding space, 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_dim(model: *const Cl2cmModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.shape().output_dim)
}

/// Expected vision feature length, 0 for a null model.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_feature_dim(model: *const Cl2cmModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.shape().feat_dim)
}

/// Sentence embedding of target-language tokens.
///
/// # Safety
/// `tokens` must hold `len` ids; `out` must hold `cl2cm_model_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_encode_text(
    model: *const Cl2cmModel,
    tokens: *const usize,
    len: usize,
    out: *mut f64,
) -> Cl2cmStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(Cl2cmStatus::NullPointer, "model is null");
        };
        if tokens.is_null() || out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "tokens or out is null");
        }
        let toks = std::slice::from_raw_parts(tokens, len);
        match encoders::encode_text(toks, Language::Target, &m.params) {
            Ok(e) => {
                write_out(out, e.sentence_rep.as_slice());
                Cl2cmStatus::Ok
            }
            Err(e) => fail(Cl2cmStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Vision embedding of one feature vector.
///
/// # Safety
/// `feature` must hold `len` doubles; `out` must hold `cl2cm_model_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cl2cm_model_encode_vision(
    model: *const Cl2cmModel,
    feature: *const f64,
    len: usize,
    out: *mut f64,
) -> Cl2cmStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(Cl2cmStatus::NullPointer, "model is null");
        };
        if feature.is_null() || out.is_null() {
            return fail(Cl2cmStatus::NullPointer, "feature or out is null");
        }
        let v = match Vector::new(std::slice::from_raw_parts(feature, len).to_vec()) {
            Ok(v) => v,
            Err(e) => return fail(Cl2cmStatus::InvalidArgument, e.to_string()),
        };
        match encoders::encode_vision(&v, &m.params) {
            Ok(e) => {
                write_out(out, e.as_slice());
                Cl2cmStatus::Ok
            }
            Err(e) => fail(Cl2cmStatus::InvalidArgument, e.to_string()),
        }
    })
}
