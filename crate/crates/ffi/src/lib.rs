//! C ABI over `labcvar`.
//!
//! Conventions:
//! - every fallible function returns a [`LabcvarStatus`]; on failure the
//!   message is available through [`labcvar_last_error`] on the same thread;
//! - objects are opaque handles created by `*_new` / `*_load` and released by
//!   the matching `*_free`;
//! - arrays are passed as pointer plus length, and output arrays must be
//!   allocated by the caller;
//! - panics never cross the boundary, they surface as
//!   [`LabcvarStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use labcvar::bounds::{feasible_tau_range, optimal_bounds, BoundParams, ClassBounds};
use labcvar::losses::{LossSpec, Objective};
use labcvar::model::MlpModel;
use labcvar::numerics::{Matrix, RngState};
use labcvar::solver::{closed_form_zero_one, solve_lab_cvar, WeightBox};
use labcvar::Error;

/// Result codes. Values other than `Ok` mirror the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabcvarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Infeasible = 4,
    Parse = 5,
    Io = 6,
    Config = 7,
    Internal = 8,
}

/// Class-wise weight bounds built from training counts.
pub struct LabcvarBounds {
    inner: ClassBounds,
}

/// Fully connected classifier.
pub struct LabcvarModel {
    inner: MlpModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let mut s = msg.into();
    s.retain(|c| c != '\0');
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> LabcvarStatus {
    match e {
        Error::InvalidArgument(_) => LabcvarStatus::InvalidArgument,
        Error::ShapeMismatch(_) => LabcvarStatus::ShapeMismatch,
        Error::Infeasible { .. } => LabcvarStatus::Infeasible,
        Error::Parse { .. } => LabcvarStatus::Parse,
        Error::Io(_) => LabcvarStatus::Io,
        Error::Json(_) => LabcvarStatus::Config,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LabcvarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            LabcvarStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LabcvarStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            LabcvarStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn labcvar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn labcvar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Feasible `tau1` interval `[lo, hi]` for the given counts, `k` and `eta`.
/// An empty interval is reported as `Infeasible` with `lo`/`hi` set to NaN.
///
/// # Safety
/// `counts` must point to `n_classes` values; `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_feasible_tau_range(
    counts: *const usize,
    n_classes: usize,
    k: f64,
    eta: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> LabcvarStatus {
    guard(|| {
        let c = slice(counts, n_classes, "counts")?;
        let (lo, hi) = (out(lo, "lo")?, out(hi, "hi")?);
        let r = feasible_tau_range(c, k, eta);
        *lo = r.lo;
        *hi = r.hi;
        if r.is_empty() {
            return Err(Error::Infeasible {
                message: "no feasible tau1".into(),
                feasible_tau: Some(r),
            }
            .into());
        }
        Ok(())
    })
}

/// Optimal class bounds for the given counts and `(k, tau1, eta)`.
///
/// # Safety
/// `counts` must point to `n_classes` values; `out_bounds` must be writable.
/// The handle must be released with [`labcvar_bounds_free`].
#[no_mangle]
pub unsafe extern "C" fn labcvar_bounds_new(
    counts: *const usize,
    n_classes: usize,
    k: f64,
    tau1: f64,
    eta: f64,
    out_bounds: *mut *mut LabcvarBounds,
) -> LabcvarStatus {
    guard(|| {
        let c = slice(counts, n_classes, "counts")?;
        let dst = out(out_bounds, "out_bounds")?;
        *dst = std::ptr::null_mut();
        let inner = optimal_bounds(c, &BoundParams::new(k, tau1, eta)?)?;
        *dst = Box::into_raw(Box::new(LabcvarBounds { inner }));
        Ok(())
    })
}

/// # Safety
/// `bounds` must come from [`labcvar_bounds_new`] and not be used afterwards.
/// Null is accepted.
#[no_mangle]
pub unsafe extern "C" fn labcvar_bounds_free(bounds: *mut LabcvarBounds) {
    if !bounds.is_null() {
        drop(Box::from_raw(bounds));
    }
}

/// Number of classes covered by the bounds, 0 for a null handle.
///
/// # Safety
/// `bounds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn labcvar_bounds_num_classes(bounds: *const LabcvarBounds) -> usize {
    bounds.as_ref().map_or(0, |b| b.inner.num_classes())
}

/// Copies `alpha`, `beta`, the per-sample lower weights `1/(beta_j n)` and
/// upper weights `1/(alpha_j n)`. Any output pointer may be null to skip it.
///
/// # Safety
/// `bounds` must be a live handle; non-null outputs must hold `n_classes`
/// values.
#[no_mangle]
pub unsafe extern "C" fn labcvar_bounds_get(
    bounds: *const LabcvarBounds,
    n_classes: usize,
    alpha: *mut f64,
    beta: *mut f64,
    lower_weight: *mut f64,
    upper_weight: *mut f64,
) -> LabcvarStatus {
    guard(|| {
        let b = &handle(bounds, "bounds")?.inner;
        if n_classes != b.num_classes() {
            return Err(Error::ShapeMismatch(format!("bounds cover {} classes", b.num_classes())).into());
        }
        for (dst, src) in [
            (alpha, &b.alpha),
            (beta, &b.beta),
            (lower_weight, &b.lower_weight),
            (upper_weight, &b.upper_weight),
        ] {
            if !dst.is_null() {
                slice_mut(dst, n_classes, "output")?.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// `max Σ w_i loss_i` over the simplex intersected with `lower ≤ w ≤ upper`.
/// `weights` (may be null) receives the maximizer.
///
/// # Safety
/// `losses`, `lower`, `upper` must point to `n` values, `weights` to `n`
/// writable values when non-null, `objective` must be writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_solve(
    losses: *const f64,
    lower: *const f64,
    upper: *const f64,
    n: usize,
    weights: *mut f64,
    objective: *mut f64,
) -> LabcvarStatus {
    guard(|| {
        let l = slice(losses, n, "losses")?;
        let bx = WeightBox::new(slice(lower, n, "lower")?.to_vec(), slice(upper, n, "upper")?.to_vec())?;
        let obj = out(objective, "objective")?;
        let sol = solve_lab_cvar(l, &bx)?;
        *obj = sol.objective;
        if !weights.is_null() {
            slice_mut(weights, n, "weights")?.copy_from_slice(&sol.weights);
        }
        Ok(())
    })
}

/// Zero-one closed form evaluated on per-class error rates.
///
/// # Safety
/// `bounds` must be a live handle, `per_class_error` must point to
/// `n_classes` values, `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_closed_form_zero_one(
    bounds: *const LabcvarBounds,
    per_class_error: *const f64,
    n_classes: usize,
    value: *mut f64,
) -> LabcvarStatus {
    guard(|| {
        let b = &handle(bounds, "bounds")?.inner;
        let e = slice(per_class_error, n_classes, "per_class_error")?;
        *out(value, "value")? = closed_form_zero_one(e, b)?;
        Ok(())
    })
}

/// Evaluates a loss given as JSON (e.g. `{"kind":"erm"}`) on a batch of
/// row-major logits. `grad` (may be null) receives `∂loss/∂logits`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `counts` must point to
/// `n_classes` values; `logits` and `grad` (when non-null) to
/// `batch * n_classes` values; `labels` to `batch` values; `total` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_loss_evaluate(
    spec_json: *const c_char,
    counts: *const usize,
    n_classes: usize,
    logits: *const f64,
    labels: *const usize,
    batch: usize,
    epoch: usize,
    total: *mut f64,
    grad: *mut f64,
) -> LabcvarStatus {
    guard(|| {
        let spec: LossSpec = serde_json::from_str(string(spec_json, "spec_json")?).map_err(Error::from)?;
        let c = slice(counts, n_classes, "counts")?;
        let len = batch
            .checked_mul(n_classes)
            .ok_or_else(|| Error::InvalidArgument("batch too large".into()))?;
        let z = Matrix::from_vec(batch, n_classes, slice(logits, len, "logits")?.to_vec())?;
        let y = slice(labels, batch, "labels")?;
        let dst = out(total, "total")?;
        let ev = Objective::new(spec, c)?.evaluate(&z, y, epoch)?;
        *dst = ev.output.total;
        if !grad.is_null() {
            slice_mut(grad, len, "grad")?.copy_from_slice(ev.output.grad_logits.as_slice());
        }
        Ok(())
    })
}

/// Randomly initialized model. `hidden` lists the hidden widths (may be null
/// when `n_hidden` is 0).
///
/// # Safety
/// `hidden` must point to `n_hidden` values; `out_model` must be writable.
/// Release the handle with [`labcvar_model_free`].
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_new(
    input_dim: usize,
    hidden: *const usize,
    n_hidden: usize,
    n_classes: usize,
    seed: u64,
    out_model: *mut *mut LabcvarModel,
) -> LabcvarStatus {
    guard(|| {
        let h = slice(hidden, n_hidden, "hidden")?;
        let dst = out(out_model, "out_model")?;
        *dst = std::ptr::null_mut();
        if input_dim == 0 || n_classes == 0 || h.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()).into());
        }
        let mut rng = RngState::new(seed);
        let inner = MlpModel::new(input_dim, h, n_classes, &mut rng);
        *dst = Box::into_raw(Box::new(LabcvarModel { inner }));
        Ok(())
    })
}

/// Reads a text checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_load(path: *const c_char, out_model: *mut *mut LabcvarModel) -> LabcvarStatus {
    guard(|| {
        let p = string(path, "path")?;
        let dst = out(out_model, "out_model")?;
        *dst = std::ptr::null_mut();
        let file = std::fs::File::open(Path::new(p)).map_err(Error::from)?;
        let inner = MlpModel::read_checkpoint(std::io::BufReader::new(file))?;
        *dst = Box::into_raw(Box::new(LabcvarModel { inner }));
        Ok(())
    })
}

/// Writes a text checkpoint.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_save(model: *const LabcvarModel, path: *const c_char) -> LabcvarStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let p = string(path, "path")?;
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf)?;
        std::fs::write(p, buf).map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is
/// accepted.
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_free(model: *mut LabcvarModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width and number of classes of a model.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_dims(
    model: *const LabcvarModel,
    input_dim: *mut usize,
    n_classes: *mut usize,
) -> LabcvarStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        *out(input_dim, "input_dim")? = m.input_dim();
        *out(n_classes, "n_classes")? = m.num_classes();
        Ok(())
    })
}

/// Logits for `rows` row-major inputs of width `cols`.
///
/// # Safety
/// `x` must point to `rows * cols` values and `logits` to
/// `rows * n_classes` writable values.
#[no_mangle]
pub unsafe extern "C" fn labcvar_model_forward(
    model: *const LabcvarModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    logits: *mut f64,
    logits_len: usize,
) -> LabcvarStatus {
    guard(|| {
        let m = &handle(model, "model")?.inner;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::InvalidArgument("input too large".into()))?;
        let xm = Matrix::from_vec(rows, cols, slice(x, len, "x")?.to_vec())?;
        let z = m.forward(&xm)?;
        if logits_len != z.as_slice().len() {
            return Err(Error::ShapeMismatch(format!("logits buffer needs {} values", z.as_slice().len())).into());
        }
        slice_mut(logits, logits_len, "logits")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(labcvar_last_error()) }.to_string_lossy().into_owned()
    }

    #[test]
    fn status_codes_match_cli_exit_codes() {
        for e in [
            Error::InvalidArgument(String::new()),
            Error::ShapeMismatch(String::new()),
            Error::Parse {
                line: 1,
                message: String::new(),
            },
        ] {
            assert_eq!(status_of(&e) as i32, e.exit_code());
        }
    }

    #[test]
    fn null_outputs_are_reported() {
        let counts = [1usize, 2];
        let st = unsafe { labcvar_bounds_new(counts.as_ptr(), 2, 0.25, 1.0, 0.5, std::ptr::null_mut()) };
        assert_eq!(st, LabcvarStatus::NullPointer);
        assert!(last_error().contains("out_bounds"));
    }

    #[test]
    fn panics_do_not_escape() {
        assert_eq!(guard(|| panic!("boom")), LabcvarStatus::Internal);
        assert_eq!(last_error(), "internal panic");
    }
}
