//! C ABI for the diffusion inverse-problem solvers.
//!
//! Conventions:
//!
//! - Handles (`McgSchedule`, `McgModel`, `McgOperator`) are opaque pointers
//!   created by `*_new` functions and released by the matching `*_free`.
//! - Every fallible call returns an [`McgStatus`] code; `MCG_STATUS_OK` is 0.
//!   On failure, `mcg_last_error_message` copies a human-readable reason for
//!   the calling thread's most recent error.
//! - Buffers are caller-allocated; lengths are element counts of `double`.
//!
//! The generated header lands in `include/mcg.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use mcg_core::operators::{
    ColorCoupling, DenseOperator, ForwardOperator, InpaintingMask, RadonTransform, WeightKind,
};
use mcg_core::schedule::Schedule;
use mcg_core::score::{AnyScoreModel, EmpiricalMixtureScore, GaussianSubspaceScore, ScoreModel};
use mcg_core::solver::{
    solve_inverse, GradientVariant, McgPlacement, SamplerConfig, SamplerFamily, SolveInputs,
};

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NumericalFailure = 4,
    IoFailure = 5,
}

fn status_of(err: &mcg_core::McgError) -> McgStatus {
    use mcg_core::McgError::*;
    match err {
        Parameter(_) | StepIndex { .. } | UnsupportedKind(_) | Parse(_) => {
            McgStatus::InvalidArgument
        }
        DimensionMismatch { .. } => McgStatus::DimensionMismatch,
        ConsistencyNotConverged { .. } | SamplerDivergence { .. } | TrainingDivergence { .. } => {
            McgStatus::NumericalFailure
        }
        Io(_) => McgStatus::IoFailure,
    }
}

fn fail(err: mcg_core::McgError) -> McgStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Opaque noise-schedule handle.
pub struct McgSchedule {
    inner: Arc<Schedule>,
}

/// Opaque score-model handle.
pub struct McgModel {
    inner: AnyScoreModel,
}

/// Opaque forward-operator handle.
pub struct McgOperator {
    inner: ForwardOperator,
}

/// Sampler configuration for `mcg_solve`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McgSamplerOptions {
    /// 0 = ancestral VP, 1 = predictor-corrector VE.
    pub family: u32,
    /// Reverse-diffusion steps; must equal the model's schedule length.
    pub nfe: u32,
    /// Gradient scale before residual normalization.
    pub alpha_prime: f64,
    /// 0 = none, 1 = constrained gradient, 2 = matched-noise ablation.
    pub gradient_variant: u32,
    /// Nonzero enables the measurement-consistency projection.
    pub use_projection: u32,
    pub corrector_steps: u32,
    pub corrector_snr: f64,
    /// 0 = gradient after every sub-step, 1 = once per sweep.
    pub placement: u32,
    /// 0 = identity, 1 = operator transpose, 2 = pseudo-inverse.
    pub weight_kind: u32,
    pub seed: u64,
}

/// Solve outputs beyond the reconstruction itself. Quality metrics are NaN
/// when no ground truth was supplied.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct McgSolveMetrics {
    pub mse_mc: f64,
    pub mse: f64,
    pub psnr_db: f64,
    pub nfe_used: u64,
    pub seconds: f64,
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        None
    } else {
        Some(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

/// Copies the calling thread's last error message (NUL-terminated,
/// truncated to `cap`). Returns the untruncated length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be null to query the length).
#[no_mangle]
pub unsafe extern "C" fn mcg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mcg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// VP schedule with linearly increasing beta.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcg_schedule_vp_new(
    n: usize,
    beta_min: f64,
    beta_max: f64,
    out: *mut *mut McgSchedule,
) -> McgStatus {
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    match Schedule::vp(n, beta_min, beta_max) {
        Ok(s) => {
            unsafe { *out = Box::into_raw(Box::new(McgSchedule { inner: Arc::new(s) })) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// VE schedule with geometrically increasing sigma.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mcg_schedule_ve_new(
    n: usize,
    sigma_min: f64,
    sigma_max: f64,
    out: *mut *mut McgSchedule,
) -> McgStatus {
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    match Schedule::ve(n, sigma_min, sigma_max) {
        Ok(s) => {
            unsafe { *out = Box::into_raw(Box::new(McgSchedule { inner: Arc::new(s) })) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Signal coefficient `a_i` and noise level `b_i` for `i` in `1..=N`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_schedule_coeffs(
    schedule: *const McgSchedule,
    i: usize,
    a_out: *mut f64,
    b_out: *mut f64,
) -> McgStatus {
    let Some(s) = (unsafe { schedule.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    if i < 1 || i > s.inner.n() {
        set_error(format!("step index {i} out of range 1..={}", s.inner.n()));
        return McgStatus::InvalidArgument;
    }
    unsafe {
        if !a_out.is_null() {
            *a_out = s.inner.a(i);
        }
        if !b_out.is_null() {
            *b_out = s.inner.b(i);
        }
    }
    McgStatus::Ok
}

/// # Safety
/// `schedule` must come from a `mcg_schedule_*_new` call (or be null).
#[no_mangle]
pub unsafe extern "C" fn mcg_schedule_free(schedule: *mut McgSchedule) {
    if !schedule.is_null() {
        drop(unsafe { Box::from_raw(schedule) });
    }
}

// ---------------------------------------------------------------------------
// Score models
// ---------------------------------------------------------------------------

/// Gaussian prior on an `l`-dimensional affine subspace: `mean` has length
/// `n`, `basis` is `n x l` row-major with orthonormal columns, `tau2` the
/// tangent variance.
///
/// # Safety
/// Array pointers must cover the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_gaussian_new(
    schedule: *const McgSchedule,
    mean: *const f64,
    n: usize,
    basis: *const f64,
    l: usize,
    tau2: f64,
    out: *mut *mut McgModel,
) -> McgStatus {
    let Some(s) = (unsafe { schedule.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let (Some(mean), Some(basis)) =
        (unsafe { slice_arg(mean, n) }, unsafe { slice_arg(basis, n * l) })
    else {
        return McgStatus::NullPointer;
    };
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    let mean = Array1::from_vec(mean.to_vec());
    let basis = match Array2::from_shape_vec((n, l), basis.to_vec()) {
        Ok(b) => b,
        Err(e) => {
            set_error(e.to_string());
            return McgStatus::InvalidArgument;
        }
    };
    match GaussianSubspaceScore::new(s.inner.clone(), mean, basis, tau2) {
        Ok(m) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgModel {
                    inner: AnyScoreModel::Gaussian(m),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Exact mixture score of a finite dataset (`k x n` row-major).
///
/// # Safety
/// `data` must cover `k * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_mixture_new(
    schedule: *const McgSchedule,
    data: *const f64,
    k: usize,
    n: usize,
    out: *mut *mut McgModel,
) -> McgStatus {
    let Some(s) = (unsafe { schedule.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(data) = (unsafe { slice_arg(data, k * n) }) else {
        return McgStatus::NullPointer;
    };
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    let data = match Array2::from_shape_vec((k, n), data.to_vec()) {
        Ok(d) => d,
        Err(e) => {
            set_error(e.to_string());
            return McgStatus::InvalidArgument;
        }
    };
    match EmpiricalMixtureScore::new(s.inner.clone(), data) {
        Ok(m) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgModel {
                    inner: AnyScoreModel::Mixture(m),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads a serialized score model (any kind, including trained networks).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_load(path: *const c_char, out: *mut *mut McgModel) -> McgStatus {
    if path.is_null() || out.is_null() {
        return McgStatus::NullPointer;
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid utf-8");
            return McgStatus::InvalidArgument;
        }
    };
    match AnyScoreModel::load(Path::new(path)) {
        Ok(m) => {
            unsafe { *out = Box::into_raw(Box::new(McgModel { inner: m })) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Saves a model to the flat binary weight format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `model` a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_save(model: *const McgModel, path: *const c_char) -> McgStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    if path.is_null() {
        return McgStatus::NullPointer;
    }
    let path = match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid utf-8");
            return McgStatus::InvalidArgument;
        }
    };
    match m.inner.save(Path::new(path)) {
        Ok(()) => McgStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Signal dimension of the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_dim(model: *const McgModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.dim())
}

/// Evaluates the score `s(x, i)` into `out` (length `n`).
///
/// # Safety
/// `x` and `out` must cover `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_score(
    model: *const McgModel,
    x: *const f64,
    n: usize,
    i: usize,
    out: *mut f64,
) -> McgStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(x) = (unsafe { slice_arg(x, n) }) else {
        return McgStatus::NullPointer;
    };
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != m.inner.dim() {
        set_error(format!("expected dimension {}, got {n}", m.inner.dim()));
        return McgStatus::DimensionMismatch;
    }
    if i < 1 || i > m.inner.schedule().n() {
        set_error(format!("step index {i} out of range"));
        return McgStatus::InvalidArgument;
    }
    let s = m.inner.score(&Array1::from_vec(x.to_vec()), i);
    unsafe { std::ptr::copy_nonoverlapping(s.as_ptr(), out, n) };
    McgStatus::Ok
}

/// Posterior-mean denoising `Q_i(x)` into `out` (length `n`).
///
/// # Safety
/// `x` and `out` must cover `n` doubles each.
#[no_mangle]
pub unsafe extern "C" fn mcg_model_tweedie_denoise(
    model: *const McgModel,
    x: *const f64,
    n: usize,
    i: usize,
    out: *mut f64,
) -> McgStatus {
    let Some(m) = (unsafe { model.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(x) = (unsafe { slice_arg(x, n) }) else {
        return McgStatus::NullPointer;
    };
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != m.inner.dim() {
        set_error(format!("expected dimension {}, got {n}", m.inner.dim()));
        return McgStatus::DimensionMismatch;
    }
    if i < 1 || i > m.inner.schedule().n() {
        set_error(format!("step index {i} out of range"));
        return McgStatus::InvalidArgument;
    }
    let d = m.inner.tweedie_denoise(&Array1::from_vec(x.to_vec()), i);
    unsafe { std::ptr::copy_nonoverlapping(d.as_ptr(), out, n) };
    McgStatus::Ok
}

/// # Safety
/// `model` must come from a model constructor (or be null).
#[no_mangle]
pub unsafe extern "C" fn mcg_model_free(model: *mut McgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

// ---------------------------------------------------------------------------
// Forward operators
// ---------------------------------------------------------------------------

/// Coordinate-selection (inpainting) operator keeping `kept` (0-based,
/// strictly valid indices) out of an `n`-vector.
///
/// # Safety
/// `kept` must cover `m` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_inpainting_new(
    n: usize,
    kept: *const usize,
    m: usize,
    out: *mut *mut McgOperator,
) -> McgStatus {
    if kept.is_null() || out.is_null() {
        return McgStatus::NullPointer;
    }
    let kept = unsafe { std::slice::from_raw_parts(kept, m) }.to_vec();
    match InpaintingMask::new(n, kept) {
        Ok(p) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgOperator {
                    inner: ForwardOperator::Inpainting(p),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Luminance-first channel-coupling operator over `n_pixels` planar RGB
/// pixels (signal length `3 * n_pixels`).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_color_new(
    n_pixels: usize,
    out: *mut *mut McgOperator,
) -> McgStatus {
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    match ColorCoupling::luminance(n_pixels) {
        Ok(c) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgOperator {
                    inner: ForwardOperator::ColorCoupling(c),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Parallel-beam tomography operator over a `side x side` image with
/// `n_views` evenly spaced over 180 degrees and `n_detectors` bins per view.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_radon_new(
    side: usize,
    n_views: usize,
    n_detectors: usize,
    out: *mut *mut McgOperator,
) -> McgStatus {
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    match RadonTransform::new(side, n_views, n_detectors) {
        Ok(r) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgOperator {
                    inner: ForwardOperator::Radon(r),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Dense operator from an `m x n` row-major matrix.
///
/// # Safety
/// `matrix` must cover `m * n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_dense_new(
    matrix: *const f64,
    m: usize,
    n: usize,
    out: *mut *mut McgOperator,
) -> McgStatus {
    let Some(matrix) = (unsafe { slice_arg(matrix, m * n) }) else {
        return McgStatus::NullPointer;
    };
    if out.is_null() {
        return McgStatus::NullPointer;
    }
    let matrix = match Array2::from_shape_vec((m, n), matrix.to_vec()) {
        Ok(d) => d,
        Err(e) => {
            set_error(e.to_string());
            return McgStatus::InvalidArgument;
        }
    };
    match DenseOperator::new(matrix) {
        Ok(d) => {
            unsafe {
                *out = Box::into_raw(Box::new(McgOperator {
                    inner: ForwardOperator::Dense(d),
                }))
            };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Measurement dimension `m`.
///
/// # Safety
/// `op` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_m(op: *const McgOperator) -> usize {
    unsafe { op.as_ref() }.map_or(0, |o| o.inner.m())
}

/// Signal dimension `n`.
///
/// # Safety
/// `op` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_n(op: *const McgOperator) -> usize {
    unsafe { op.as_ref() }.map_or(0, |o| o.inner.n())
}

/// `y = H x`.
///
/// # Safety
/// `x` must cover `n` doubles, `y_out` must cover `m`.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_apply(
    op: *const McgOperator,
    x: *const f64,
    n: usize,
    y_out: *mut f64,
    m: usize,
) -> McgStatus {
    let Some(o) = (unsafe { op.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(x) = (unsafe { slice_arg(x, n) }) else {
        return McgStatus::NullPointer;
    };
    if y_out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != o.inner.n() || m != o.inner.m() {
        set_error("operator dimensions do not match the buffers");
        return McgStatus::DimensionMismatch;
    }
    match o.inner.apply(&Array1::from_vec(x.to_vec())) {
        Ok(y) => {
            unsafe { std::ptr::copy_nonoverlapping(y.as_ptr(), y_out, m) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// `x = H^T y`.
///
/// # Safety
/// `y` must cover `m` doubles, `x_out` must cover `n`.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_apply_transpose(
    op: *const McgOperator,
    y: *const f64,
    m: usize,
    x_out: *mut f64,
    n: usize,
) -> McgStatus {
    let Some(o) = (unsafe { op.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(y) = (unsafe { slice_arg(y, m) }) else {
        return McgStatus::NullPointer;
    };
    if x_out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != o.inner.n() || m != o.inner.m() {
        set_error("operator dimensions do not match the buffers");
        return McgStatus::DimensionMismatch;
    }
    match o.inner.apply_transpose(&Array1::from_vec(y.to_vec())) {
        Ok(x) => {
            unsafe { std::ptr::copy_nonoverlapping(x.as_ptr(), x_out, n) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Measurement-consistency projection `A x + b(y)` in place of `x_inout`.
///
/// # Safety
/// `x_inout` must cover `n` doubles, `y` must cover `m`.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_consistency_step(
    op: *const McgOperator,
    x_inout: *mut f64,
    n: usize,
    y: *const f64,
    m: usize,
) -> McgStatus {
    let Some(o) = (unsafe { op.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(y) = (unsafe { slice_arg(y, m) }) else {
        return McgStatus::NullPointer;
    };
    if x_inout.is_null() {
        return McgStatus::NullPointer;
    }
    if n != o.inner.n() || m != o.inner.m() {
        set_error("operator dimensions do not match the buffers");
        return McgStatus::DimensionMismatch;
    }
    let x = Array1::from_vec(unsafe { std::slice::from_raw_parts(x_inout, n) }.to_vec());
    match o
        .inner
        .consistency_step(&x, &Array1::from_vec(y.to_vec()))
    {
        Ok(res) => {
            unsafe { std::ptr::copy_nonoverlapping(res.as_ptr(), x_inout, n) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Pseudo-inverse `H^+ y` (transpose for orthonormal-row operators,
/// filtered backprojection for tomography).
///
/// # Safety
/// `y` must cover `m` doubles, `x_out` must cover `n`.
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_pseudo_inverse(
    op: *const McgOperator,
    y: *const f64,
    m: usize,
    x_out: *mut f64,
    n: usize,
) -> McgStatus {
    let Some(o) = (unsafe { op.as_ref() }) else {
        return McgStatus::NullPointer;
    };
    let Some(y) = (unsafe { slice_arg(y, m) }) else {
        return McgStatus::NullPointer;
    };
    if x_out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != o.inner.n() || m != o.inner.m() {
        set_error("operator dimensions do not match the buffers");
        return McgStatus::DimensionMismatch;
    }
    match o.inner.pseudo_inverse_apply(&Array1::from_vec(y.to_vec())) {
        Ok(x) => {
            unsafe { std::ptr::copy_nonoverlapping(x.as_ptr(), x_out, n) };
            McgStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `op` must come from an operator constructor (or be null).
#[no_mangle]
pub unsafe extern "C" fn mcg_operator_free(op: *mut McgOperator) {
    if !op.is_null() {
        drop(unsafe { Box::from_raw(op) });
    }
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

fn config_from_options(opts: &McgSamplerOptions) -> Result<SamplerConfig, String> {
    let family = match opts.family {
        0 => SamplerFamily::AncestralVp,
        1 => SamplerFamily::PredictorCorrectorVe,
        other => return Err(format!("unknown family {other}")),
    };
    let gradient_variant = match opts.gradient_variant {
        0 => GradientVariant::None,
        1 => GradientVariant::McgTweedie,
        2 => GradientVariant::MatchedNoise,
        other => return Err(format!("unknown gradient variant {other}")),
    };
    let mcg_placement = match opts.placement {
        0 => McgPlacement::AfterPredictorAndCorrector,
        1 => McgPlacement::AfterSweep,
        other => return Err(format!("unknown placement {other}")),
    };
    Ok(SamplerConfig {
        family,
        nfe: opts.nfe as usize,
        alpha_prime: opts.alpha_prime,
        gradient_variant,
        use_projection: opts.use_projection != 0,
        corrector_steps_per_iter: opts.corrector_steps as usize,
        corrector_snr: opts.corrector_snr,
        mcg_placement,
        stop_gradient: false,
        seed: opts.seed,
    })
}

fn weight_from_options(opts: &McgSamplerOptions) -> Result<WeightKind, String> {
    match opts.weight_kind {
        0 => Ok(WeightKind::Identity),
        1 => Ok(WeightKind::OperatorTranspose),
        2 => Ok(WeightKind::PseudoInverse),
        other => Err(format!("unknown weight kind {other}")),
    }
}

/// Runs the configured sampler and writes the reconstruction into `x_out`
/// (length `n`). `x_true` may be null; when provided (length `n`) the
/// quality metrics are filled in, otherwise they are NaN.
///
/// # Safety
/// All non-null pointers must cover their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mcg_solve(
    model: *const McgModel,
    op: *const McgOperator,
    options: *const McgSamplerOptions,
    y: *const f64,
    m: usize,
    x_true: *const f64,
    x_out: *mut f64,
    n: usize,
    metrics_out: *mut McgSolveMetrics,
) -> McgStatus {
    let (Some(model), Some(op), Some(options)) = (
        unsafe { model.as_ref() },
        unsafe { op.as_ref() },
        unsafe { options.as_ref() },
    ) else {
        return McgStatus::NullPointer;
    };
    let Some(y) = (unsafe { slice_arg(y, m) }) else {
        return McgStatus::NullPointer;
    };
    if x_out.is_null() {
        return McgStatus::NullPointer;
    }
    if n != op.inner.n() || m != op.inner.m() {
        set_error("solver buffers do not match the operator dimensions");
        return McgStatus::DimensionMismatch;
    }
    let config = match config_from_options(options) {
        Ok(c) => c,
        Err(msg) => {
            set_error(msg);
            return McgStatus::InvalidArgument;
        }
    };
    let weight = match weight_from_options(options) {
        Ok(w) => w,
        Err(msg) => {
            set_error(msg);
            return McgStatus::InvalidArgument;
        }
    };
    let y = Array1::from_vec(y.to_vec());
    let truth = unsafe { slice_arg(x_true, n) }.map(|t| Array1::from_vec(t.to_vec()));
    let mut inputs = SolveInputs::new(&op.inner, weight, &y);
    if let Some(t) = &truth {
        inputs = inputs.with_truth(t);
    }
    match solve_inverse(&config, &model.inner, &inputs) {
        Ok(report) => {
            unsafe {
                std::ptr::copy_nonoverlapping(report.x0_hat.as_ptr(), x_out, n);
                if !metrics_out.is_null() {
                    *metrics_out = McgSolveMetrics {
                        mse_mc: report.mse_mc,
                        mse: report.mse.unwrap_or(f64::NAN),
                        psnr_db: report.psnr_db.unwrap_or(f64::NAN),
                        nfe_used: report.nfe_used as u64,
                        seconds: report.seconds,
                    };
                }
            }
            McgStatus::Ok
        }
        Err(failure) => fail(failure.error),
    }
}
