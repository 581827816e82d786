//! C ABI over `paramdelta`.
//!
//! Conventions:
//! - Every fallible call returns a `PdStatus`; `PD_STATUS_OK` is 0.
//! - On failure, `pd_last_error_message()` describes the error until the
//!   next call on the same thread.
//! - Checkpoints are opaque `PdCheckpoint` handles released with
//!   `pd_checkpoint_free`. Strings returned by the library are released with
//!   `pd_string_free`.
//! - Paths and names are NUL-terminated UTF-8.
//! - `threads` of 0 or 1 runs single-threaded; output bytes never depend on it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use paramdelta::analysis::{cosine_map, norm_map, BinSpec, ClassificationRules};
use paramdelta::transfer::{fit_gamma, hypothetical, FitMode};
use paramdelta::{
    apply_delta, extract_delta, fuse, validate_homologous, Checkpoint, CheckpointKind, DType, Error,
    ExecOptions, MissingPolicy,
};

/// Result of every fallible call. One code per library error class, plus
/// argument and panic codes for the boundary itself.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    IoFailure = 1,
    MalformedHeader = 2,
    OverlappingRegions = 3,
    TruncatedFile = 4,
    DuplicateTensorName = 5,
    UnsupportedDType = 6,
    UnknownTensor = 7,
    ShapeMismatch = 8,
    NotHomologous = 9,
    ShapeConflict = 10,
    EmptyIntersection = 11,
    NonFiniteCoefficient = 12,
    InvalidSpec = 13,
    NoSharedTensors = 14,
    EmptyInput = 15,
    InvalidScoreTable = 16,
    NoCompleteTriples = 17,
    DegenerateInput = 18,
    DuplicateAlpha = 19,
    NonFiniteAlpha = 20,
    InvalidJson = 21,
    /// A null pointer, bad UTF-8 or out-of-range argument.
    InvalidArgument = 100,
    /// The caller's buffer is too small; the required size was reported.
    BufferTooSmall = 101,
    /// A Rust panic was caught at the boundary.
    Panic = 102,
}

impl From<&Error> for PdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => PdStatus::IoFailure,
            Error::MalformedHeader { .. } => PdStatus::MalformedHeader,
            Error::OverlappingRegions { .. } => PdStatus::OverlappingRegions,
            Error::TruncatedFile { .. } => PdStatus::TruncatedFile,
            Error::DuplicateTensorName { .. } => PdStatus::DuplicateTensorName,
            Error::UnsupportedDType { .. } => PdStatus::UnsupportedDType,
            Error::UnknownTensor(_) => PdStatus::UnknownTensor,
            Error::ShapeMismatch { .. } => PdStatus::ShapeMismatch,
            Error::NotHomologous(_) => PdStatus::NotHomologous,
            Error::ShapeConflict { .. } => PdStatus::ShapeConflict,
            Error::EmptyIntersection => PdStatus::EmptyIntersection,
            Error::NonFiniteCoefficient(_) => PdStatus::NonFiniteCoefficient,
            Error::InvalidSpec(_) => PdStatus::InvalidSpec,
            Error::NoSharedTensors => PdStatus::NoSharedTensors,
            Error::EmptyInput => PdStatus::EmptyInput,
            Error::ScoreTable(_) => PdStatus::InvalidScoreTable,
            Error::NoCompleteTriples => PdStatus::NoCompleteTriples,
            Error::DegenerateInput(_) => PdStatus::DegenerateInput,
            Error::DuplicateAlpha(_) => PdStatus::DuplicateAlpha,
            Error::NonFiniteAlpha(_) => PdStatus::NonFiniteAlpha,
            Error::Json(_) => PdStatus::InvalidJson,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdDtype {
    F32 = 0,
    F16 = 1,
    Bf16 = 2,
}

impl From<DType> for PdDtype {
    fn from(d: DType) -> Self {
        match d {
            DType::F32 => PdDtype::F32,
            DType::F16 => PdDtype::F16,
            DType::BF16 => PdDtype::Bf16,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdKind {
    Base = 0,
    Post = 1,
    Delta = 2,
    Fused = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdMissingPolicy {
    Strict = 0,
    Intersect = 1,
    AnchorPassthrough = 2,
}

impl From<PdMissingPolicy> for MissingPolicy {
    fn from(p: PdMissingPolicy) -> Self {
        match p {
            PdMissingPolicy::Strict => MissingPolicy::Strict,
            PdMissingPolicy::Intersect => MissingPolicy::Intersect,
            PdMissingPolicy::AnchorPassthrough => MissingPolicy::AnchorPassthrough,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdFitMode {
    ThroughOrigin = 0,
    WithIntercept = 1,
}

/// Summary of a transfer-efficiency fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PdGammaFit {
    pub gamma: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// An open checkpoint. Opaque to C.
pub struct PdCheckpoint {
    inner: Checkpoint,
    names: Vec<CString>,
}

impl PdCheckpoint {
    fn new(inner: Checkpoint) -> Box<Self> {
        let names = inner
            .names()
            .map(|n| CString::new(n).unwrap_or_default())
            .collect();
        Box::new(Self { inner, names })
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

/// Failure inside a call: a status and its message.
struct Failure(PdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PdStatus::from(&e), format!("{}: {e}", e.class()))
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PdStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure for `pd_last_error_message`, and turns
/// panics into `PD_STATUS_PANIC`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ck_arg<'a>(p: *const PdCheckpoint, what: &str) -> Result<&'a PdCheckpoint, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

fn opts(threads: u32) -> ExecOptions {
    ExecOptions::with_threads(threads as usize)
}

unsafe fn hand_out(ck: Checkpoint, out: *mut *mut PdCheckpoint) {
    if !out.is_null() {
        *out = Box::into_raw(PdCheckpoint::new(ck));
    }
}

unsafe fn hand_out_string(text: String, out: *mut *mut c_char) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("out is null"));
    }
    *out = CString::new(text)
        .map_err(|_| invalid("result contains NUL"))?
        .into_raw();
    Ok(())
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn pd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens and validates a checkpoint. No tensor data is read.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_open(path: *const c_char, out: *mut *mut PdCheckpoint) -> PdStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let ck = Checkpoint::open(str_arg(path, "path")?)?;
        hand_out(ck, out);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `ck` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_free(ck: *mut PdCheckpoint) {
    if !ck.is_null() {
        drop(Box::from_raw(ck));
    }
}

/// Number of tensors; 0 for a null handle.
///
/// # Safety
/// `ck` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_tensor_count(ck: *const PdCheckpoint) -> usize {
    ck.as_ref().map_or(0, |c| c.names.len())
}

/// Name of the `index`-th tensor in sorted order, owned by the handle.
/// Null when out of range.
///
/// # Safety
/// `ck` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_tensor_name(ck: *const PdCheckpoint, index: usize) -> *const c_char {
    ck.as_ref()
        .and_then(|c| c.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Kind tag recorded in the checkpoint's metadata.
///
/// # Safety
/// `ck` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_kind(ck: *const PdCheckpoint, out: *mut PdKind) -> PdStatus {
    guard(|| {
        let ck = ck_arg(ck, "ck")?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = match ck.inner.kind() {
            CheckpointKind::Base => PdKind::Base,
            CheckpointKind::Post => PdKind::Post,
            CheckpointKind::Delta => PdKind::Delta,
            CheckpointKind::Fused => PdKind::Fused,
        };
        Ok(())
    })
}

/// Storage dtype, rank and element count of a tensor. When `dims` is
/// non-null, up to `dims_cap` extents are written there; `*ndim` always
/// receives the rank, and `PD_STATUS_BUFFER_TOO_SMALL` is returned if
/// `dims_cap` is short.
///
/// # Safety
/// Pointers must be null or valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn pd_checkpoint_tensor_info(
    ck: *const PdCheckpoint,
    name: *const c_char,
    dtype: *mut PdDtype,
    ndim: *mut usize,
    dims: *mut usize,
    dims_cap: usize,
    numel: *mut usize,
) -> PdStatus {
    guard(|| {
        let ck = ck_arg(ck, "ck")?;
        let name = str_arg(name, "name")?;
        let meta = ck
            .inner
            .get(name)
            .ok_or_else(|| Failure::from(Error::UnknownTensor(name.to_string())))?;
        if let Some(d) = dtype.as_mut() {
            *d = meta.dtype.into();
        }
        if let Some(n) = numel.as_mut() {
            *n = meta.numel();
        }
        if let Some(n) = ndim.as_mut() {
            *n = meta.shape.len();
        }
        if !dims.is_null() {
            if dims_cap < meta.shape.len() {
                return Err(Failure(
                    PdStatus::BufferTooSmall,
                    format!("rank {} exceeds dims_cap {dims_cap}", meta.shape.len()),
                ));
            }
            std::slice::from_raw_parts_mut(dims, meta.shape.len()).copy_from_slice(&meta.shape);
        }
        Ok(())
    })
}

/// Reads one tensor in 32-bit working precision into `out`, which must
/// hold exactly the tensor's element count.
///
/// # Safety
/// `out` must be valid for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn pd_read_tensor(
    ck: *const PdCheckpoint,
    name: *const c_char,
    out: *mut f32,
    len: usize,
) -> PdStatus {
    guard(|| {
        let ck = ck_arg(ck, "ck")?;
        let name = str_arg(name, "name")?;
        let meta = ck
            .inner
            .get(name)
            .ok_or_else(|| Failure::from(Error::UnknownTensor(name.to_string())))?;
        if len != meta.numel() {
            return Err(invalid(format!("len {len} != numel {}", meta.numel())));
        }
        if len == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let (buf, _) = ck.inner.read_tensor(name, &ExecOptions::default())?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&buf);
        Ok(())
    })
}

/// Writes `post − base` to `out_path` (F32). On success `*out`, when
/// non-null, receives a handle to the result.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pd_extract_delta(
    post: *const PdCheckpoint,
    base: *const PdCheckpoint,
    out_path: *const c_char,
    threads: u32,
    out: *mut *mut PdCheckpoint,
) -> PdStatus {
    guard(|| {
        let (post, base) = (ck_arg(post, "post")?, ck_arg(base, "base")?);
        let ck = extract_delta(&post.inner, &base.inner, str_arg(out_path, "out_path")?, &opts(threads))?;
        hand_out(ck, out);
        Ok(())
    })
}

/// Writes `anchor + alpha · delta` in the anchor's dtypes.
///
/// # Safety
/// As for `pd_extract_delta`.
#[no_mangle]
pub unsafe extern "C" fn pd_apply_delta(
    anchor: *const PdCheckpoint,
    delta: *const PdCheckpoint,
    alpha: f64,
    policy: PdMissingPolicy,
    out_path: *const c_char,
    threads: u32,
    out: *mut *mut PdCheckpoint,
) -> PdStatus {
    guard(|| {
        let (anchor, delta) = (ck_arg(anchor, "anchor")?, ck_arg(delta, "delta")?);
        let ck = apply_delta(
            &anchor.inner,
            &delta.inner,
            alpha,
            policy.into(),
            str_arg(out_path, "out_path")?,
            &opts(threads),
        )?;
        hand_out(ck, out);
        Ok(())
    })
}

/// Writes `anchor + Σ coeffs[i] · deltas[i]` for `count` deltas.
///
/// # Safety
/// `deltas` and `coeffs` must be valid for `count` elements.
#[no_mangle]
pub unsafe extern "C" fn pd_fuse(
    anchor: *const PdCheckpoint,
    deltas: *const *const PdCheckpoint,
    coeffs: *const f64,
    count: usize,
    policy: PdMissingPolicy,
    out_path: *const c_char,
    threads: u32,
    out: *mut *mut PdCheckpoint,
) -> PdStatus {
    guard(|| {
        let anchor = ck_arg(anchor, "anchor")?;
        if count > 0 && (deltas.is_null() || coeffs.is_null()) {
            return Err(invalid("deltas or coeffs is null"));
        }
        let mut terms = Vec::with_capacity(count);
        for i in 0..count {
            let d = ck_arg(*deltas.add(i), "deltas[i]")?;
            terms.push((&d.inner, *coeffs.add(i)));
        }
        let ck = fuse(
            &anchor.inner,
            &terms,
            policy.into(),
            str_arg(out_path, "out_path")?,
            &opts(threads),
        )?;
        hand_out(ck, out);
        Ok(())
    })
}

/// Structural comparison. `*homologous` receives the verdict; when
/// `report_json` is non-null it receives the full report, to be released
/// with `pd_string_free`.
///
/// # Safety
/// Handles must be live; out pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn pd_validate_homologous(
    a: *const PdCheckpoint,
    b: *const PdCheckpoint,
    homologous: *mut bool,
    report_json: *mut *mut c_char,
) -> PdStatus {
    guard(|| {
        let (a, b) = (ck_arg(a, "a")?, ck_arg(b, "b")?);
        let report = validate_homologous(&a.inner, &b.inner);
        if let Some(h) = homologous.as_mut() {
            *h = report.homologous;
        }
        if !report_json.is_null() {
            hand_out_string(report.to_json()?, report_json)?;
        }
        Ok(())
    })
}

/// Per-tensor cosine map of two deltas as a JSON report.
///
/// # Safety
/// Handles must be live; `json_out` writable. Release with `pd_string_free`.
#[no_mangle]
pub unsafe extern "C" fn pd_cosine_map_json(
    a: *const PdCheckpoint,
    b: *const PdCheckpoint,
    bins: u32,
    threads: u32,
    json_out: *mut *mut c_char,
) -> PdStatus {
    guard(|| {
        let (a, b) = (ck_arg(a, "a")?, ck_arg(b, "b")?);
        let report = cosine_map(&a.inner, &b.inner, &ClassificationRules::default(), bin_spec(bins), &opts(threads))?;
        hand_out_string(report.to_json()?, json_out)
    })
}

/// Per-tensor norm map of a delta as a JSON report.
///
/// # Safety
/// As for `pd_cosine_map_json`.
#[no_mangle]
pub unsafe extern "C" fn pd_norm_map_json(
    delta: *const PdCheckpoint,
    bins: u32,
    threads: u32,
    json_out: *mut *mut c_char,
) -> PdStatus {
    guard(|| {
        let d = ck_arg(delta, "delta")?;
        let report = norm_map(&d.inner, &ClassificationRules::default(), bin_spec(bins), &opts(threads))?;
        hand_out_string(report.to_json()?, json_out)
    })
}

/// 0 selects the default bin count.
fn bin_spec(bins: u32) -> BinSpec {
    match bins {
        0 => BinSpec::default(),
        n => BinSpec {
            bins: n as usize,
            range: None,
        },
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `base_i + post_j − base_j`.
#[no_mangle]
pub extern "C" fn pd_hypothetical(base_i: f64, post_j: f64, base_j: f64) -> f64 {
    hypothetical(base_i, post_j, base_j)
}

/// Least-squares fit of `real` on `hypothetical` over `n` points.
///
/// # Safety
/// `hyp` and `real` must be valid for `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pd_fit_gamma(
    hyp: *const f64,
    real: *const f64,
    n: usize,
    mode: PdFitMode,
    out: *mut PdGammaFit,
) -> PdStatus {
    guard(|| {
        if out.is_null() || (n > 0 && (hyp.is_null() || real.is_null())) {
            return Err(invalid("null pointer argument"));
        }
        let pairs: Vec<(f64, f64)> = (0..n).map(|i| (*hyp.add(i), *real.add(i))).collect();
        let mode = match mode {
            PdFitMode::ThroughOrigin => FitMode::ThroughOrigin,
            PdFitMode::WithIntercept => FitMode::WithIntercept,
        };
        let fit = fit_gamma(&pairs, mode)?;
        *out = PdGammaFit {
            gamma: fit.gamma,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            n_points: fit.n_points,
        };
        Ok(())
    })
}
