//! C ABI over `ohnn`.
//!
//! Objects cross the boundary as opaque handles created by `*_load`,
//! `*_generate` or `*_train` and released with the matching `*_free`.
//! Every fallible call returns an [`OhnnStatus`]; on failure a description
//! is available from [`ohnn_last_error`] on the same thread until the next
//! failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ohnn::anonymizer::{load_model, save_model, AnonymizerModel};
use ohnn::config::ExperimentConfig;
use ohnn::metrics::{eer, ScoreSet};
use ohnn::pool::{generate_synthetic, load_pool_any, save_pool, EmbeddingPool, SyntheticSpec};
use ohnn::training::train;
use ohnn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OhnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    InvalidConfig = 6,
    Numerical = 7,
    DataError = 8,
    Panic = 9,
}

/// Embedding pool handle.
pub struct OhnnPool(EmbeddingPool);

/// Trained anonymizer handle.
pub struct OhnnModel(AnonymizerModel);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OhnnSyntheticSpec {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub sigma_within: f64,
    pub sigma_between: f64,
    pub seed: u64,
    pub normalize: bool,
    pub train_speakers: usize,
    pub enroll_per_speaker: usize,
}

impl From<OhnnSyntheticSpec> for SyntheticSpec {
    fn from(s: OhnnSyntheticSpec) -> Self {
        SyntheticSpec {
            num_speakers: s.num_speakers,
            utterances_per_speaker: s.utterances_per_speaker,
            dim: s.dim,
            sigma_within: s.sigma_within,
            sigma_between: s.sigma_between,
            seed: s.seed,
            normalize: s.normalize,
            train_speakers: s.train_speakers,
            enroll_per_speaker: s.enroll_per_speaker,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OhnnStatus {
    match e {
        Error::Io(_) => OhnnStatus::Io,
        Error::Format { .. } | Error::Csv(_) | Error::Json(_) => OhnnStatus::Format,
        Error::DimensionMismatch { .. } | Error::DimMismatch { .. } => OhnnStatus::DimensionMismatch,
        Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::InvalidShape(_) => OhnnStatus::InvalidConfig,
        Error::ZeroReflectionVector { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::ZeroVector
        | Error::DivergenceDetected { .. }
        | Error::NonFinite(_) => OhnnStatus::Numerical,
        _ => OhnnStatus::DataError,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error text.
fn guard<F>(f: F) -> OhnnStatus
where
    F: FnOnce() -> Result<(), (OhnnStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OhnnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OhnnStatus::Panic
        }
    }
}

fn lib<T>(r: ohnn::Result<T>) -> Result<T, (OhnnStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (OhnnStatus, String) {
    (OhnnStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, (OhnnStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (OhnnStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (OhnnStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ohnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn ohnn_synthetic_spec_default() -> OhnnSyntheticSpec {
    let s = SyntheticSpec::default();
    OhnnSyntheticSpec {
        num_speakers: s.num_speakers,
        utterances_per_speaker: s.utterances_per_speaker,
        dim: s.dim,
        sigma_within: s.sigma_within,
        sigma_between: s.sigma_between,
        seed: s.seed,
        normalize: s.normalize,
        train_speakers: s.train_speakers,
        enroll_per_speaker: s.enroll_per_speaker,
    }
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_generate(spec: OhnnSyntheticSpec, out: *mut *mut OhnnPool) -> OhnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let pool = lib(generate_synthetic(&spec.into()))?;
        *out = Box::into_raw(Box::new(OhnnPool(pool)));
        Ok(())
    })
}

/// Loads an `EMB1` file (or CSV when the name ends in `.csv`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_load(path: *const c_char, out: *mut *mut OhnnPool) -> OhnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_arg(path)?;
        let pool = lib(load_pool_any(p))?;
        *out = Box::into_raw(Box::new(OhnnPool(pool)));
        Ok(())
    })
}

/// # Safety
/// `pool` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_save(pool: *const OhnnPool, path: *const c_char) -> OhnnStatus {
    guard(|| {
        let pool = pool.as_ref().ok_or_else(|| null("pool"))?;
        let p = path_arg(path)?;
        lib(save_pool(&pool.0, p))
    })
}

/// # Safety
/// `pool` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_free(pool: *mut OhnnPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_dim(pool: *const OhnnPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.dim())
}

/// Record count, or 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_len(pool: *const OhnnPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.len())
}

/// Copies record `index`'s vector into `out[0..len]`; `len` must equal the dimension.
///
/// # Safety
/// `pool` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ohnn_pool_vector(
    pool: *const OhnnPool,
    index: usize,
    out: *mut f64,
    len: usize,
) -> OhnnStatus {
    guard(|| {
        let pool = pool.as_ref().ok_or_else(|| null("pool"))?;
        let rec = pool
            .0
            .records()
            .get(index)
            .ok_or_else(|| (OhnnStatus::InvalidArgument, format!("record {index} out of range")))?;
        if len != rec.vector.len() {
            return Err((
                OhnnStatus::DimensionMismatch,
                format!("buffer holds {len}, dimension is {}", rec.vector.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&rec.vector);
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_load(path: *const c_char, out: *mut *mut OhnnModel) -> OhnnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path_arg(path)?;
        let model = lib(load_model(p))?;
        *out = Box::into_raw(Box::new(OhnnModel(model)));
        Ok(())
    })
}

/// Trains on `pool`. `config_toml` may be null (defaults) or a TOML document
/// in the experiment-config schema; its `stack` and `train` sections apply.
///
/// # Safety
/// `pool` must be a live handle; `config_toml` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_train(
    pool: *const OhnnPool,
    config_toml: *const c_char,
    out: *mut *mut OhnnModel,
) -> OhnnStatus {
    guard(|| {
        let pool = pool.as_ref().ok_or_else(|| null("pool"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_toml.is_null() {
            ExperimentConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|_| (OhnnStatus::InvalidArgument, "config is not valid UTF-8".into()))?;
            lib(ExperimentConfig::from_toml(text))?
        };
        let trained = lib(train(&pool.0, &cfg.stack, &cfg.train))?;
        *out = Box::into_raw(Box::new(OhnnModel(trained.model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_save(model: *const OhnnModel, path: *const c_char) -> OhnnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let p = path_arg(path)?;
        lib(save_model(&model.0, p))
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_free(model: *mut OhnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_dim(model: *const OhnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// Anonymizes `x[0..len]` into `out[0..len]`; the buffers may alias.
///
/// # Safety
/// `model` must be a live handle; `x` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ohnn_model_anonymize(
    model: *const OhnnModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> OhnnStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let input = slice_arg(x, len, "x")?.to_vec();
        let y = lib(model.0.anonymize(&input))?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&y);
        Ok(())
    })
}

/// Convex-hull equal error rate of two score lists.
///
/// # Safety
/// Score pointers must hold the given counts; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohnn_eer(
    targets: *const f64,
    num_targets: usize,
    nontargets: *const f64,
    num_nontargets: usize,
    out_eer: *mut f64,
    out_threshold: *mut f64,
) -> OhnnStatus {
    guard(|| {
        let t = slice_arg(targets, num_targets, "targets")?;
        let n = slice_arg(nontargets, num_nontargets, "nontargets")?;
        if out_eer.is_null() {
            return Err(null("out_eer"));
        }
        let r = lib(eer(&ScoreSet::new(t.to_vec(), n.to_vec())))?;
        *out_eer = r.eer;
        if !out_threshold.is_null() {
            *out_threshold = r.threshold;
        }
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ohnn_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> OhnnStatus {
    guard(|| {
        let a = slice_arg(a, len, "a")?;
        let b = slice_arg(b, len, "b")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lib(ohnn::linalg::cosine(a, b))?;
        Ok(())
    })
}
