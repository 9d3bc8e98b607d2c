//! C ABI over `pdsm`.
//!
//! Conventions: matrices are row-major `double` buffers with explicit
//! `rows`/`cols`; every fallible call returns a [`PdsmStatus`] and leaves a
//! message for [`pdsm_last_error_message`] on the calling thread; output
//! buffers are owned by the caller. Models are opaque [`PdsmModel`] handles
//! released with [`pdsm_model_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pdsm::attribution::{attribute, AttributionConfig, BaselineProfile};
use pdsm::discretize::Preset;
use pdsm::evaluation::faithfulness;
use pdsm::interchange::{MethodId, Posteriorgram};
use pdsm::model::{ToyClassifier, PARAM_COUNT};
use pdsm::{Error, Matrix};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdsmStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Format = 3,
    Shape = 4,
    Io = 5,
    Panic = 6,
}

pub const PDSM_METHOD_GRADIENT: u32 = 0;
pub const PDSM_METHOD_GRAD_INPUT: u32 = 1;
pub const PDSM_METHOD_IG: u32 = 2;
pub const PDSM_METHOD_GRADSHAP: u32 = 3;
pub const PDSM_METHOD_GUIDED_BP: u32 = 4;
pub const PDSM_METHOD_DEEPLIFT: u32 = 5;

pub const PDSM_PRESET_TT2: u32 = 0;
pub const PDSM_PRESET_FS2: u32 = 1;

/// Opaque classifier handle.
pub struct PdsmModel {
    inner: ToyClassifier,
}

/// Attribution settings. A negative `noise_sigma` selects the default
/// (0.1 times the input's standard deviation). Baselines are all-zero.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PdsmAttributionConfig {
    pub ig_steps: u32,
    pub gradshap_samples: u32,
    pub noise_sigma: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PdsmStatus {
    match err {
        Error::Validation(_) => PdsmStatus::Validation,
        Error::Format { .. } | Error::UnsupportedVersion { .. } | Error::UnsupportedLayout(_) => {
            PdsmStatus::Format
        }
        Error::ShapeMismatch { .. } => PdsmStatus::Shape,
        Error::Io { .. } | Error::Json { .. } => PdsmStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PdsmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PdsmStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PdsmStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            PdsmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<*const T, Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(p)
    }
}

/// Copies a caller buffer into a matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn read_matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<Matrix, Failure> {
    let p = non_null(data, what)?;
    let n = rows.checked_mul(cols).filter(|&n| n > 0).ok_or_else(|| {
        Error::validation(format!("{what}: empty or oversized shape {rows}x{cols}"))
    })?;
    let slice = std::slice::from_raw_parts(p, n);
    Ok(Matrix::from_vec(rows, cols, slice.to_vec())?)
}

/// # Safety
/// `out` must point to `src.len()` writable doubles.
unsafe fn write_out(src: &[f64], out: *mut f64, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn method_of(code: u32) -> Result<MethodId, Error> {
    Ok(match code {
        PDSM_METHOD_GRADIENT => MethodId::Gradient,
        PDSM_METHOD_GRAD_INPUT => MethodId::GradInput,
        PDSM_METHOD_IG => MethodId::Ig,
        PDSM_METHOD_GRADSHAP => MethodId::GradShap,
        PDSM_METHOD_GUIDED_BP => MethodId::GuidedBp,
        PDSM_METHOD_DEEPLIFT => MethodId::DeepLift,
        other => return Err(Error::validation(format!("unknown method code {other}"))),
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// Valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn pdsm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Number of doubles in a flat parameter vector.
#[no_mangle]
pub extern "C" fn pdsm_model_param_count() -> usize {
    PARAM_COUNT
}

/// Loads a model directory written by `pdsm train`.
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdsm_model_load(
    dir: *const c_char,
    out: *mut *mut PdsmModel,
) -> PdsmStatus {
    guard(|| {
        let dir = non_null(dir, "dir")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| Error::validation("dir is not valid UTF-8"))?;
        let inner = ToyClassifier::load(path)?;
        *out = Box::into_raw(Box::new(PdsmModel { inner }));
        Ok(())
    })
}

/// Builds a model from `len == pdsm_model_param_count()` parameters.
///
/// # Safety
/// `params` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdsm_model_from_params(
    params: *const f64,
    len: usize,
    out: *mut *mut PdsmModel,
) -> PdsmStatus {
    guard(|| {
        let p = non_null(params, "params")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let inner = ToyClassifier::from_params(std::slice::from_raw_parts(p, len).to_vec())?;
        *out = Box::into_raw(Box::new(PdsmModel { inner }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pdsm_model_free(model: *mut PdsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the two class probabilities of a `rows x cols` spectrogram.
///
/// # Safety
/// `x` holds `rows * cols` doubles; `probs_out` has room for 2.
#[no_mangle]
pub unsafe extern "C" fn pdsm_model_forward(
    model: *const PdsmModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    probs_out: *mut f64,
) -> PdsmStatus {
    guard(|| {
        let m = &*non_null(model, "model")?;
        let x = read_matrix(x, rows, cols, "x")?;
        write_out(&m.inner.forward(&x)?, probs_out, "probs_out")
    })
}

/// Defaults used by the command-line tool.
#[no_mangle]
pub extern "C" fn pdsm_attribution_config_default() -> PdsmAttributionConfig {
    let d = AttributionConfig::new(MethodId::Ig);
    PdsmAttributionConfig {
        ig_steps: d.ig_steps as u32,
        gradshap_samples: d.gradshap_samples as u32,
        noise_sigma: -1.0,
        seed: d.seed,
    }
}

/// Saliency map of class `target_class` with method `method`
/// (`PDSM_METHOD_*`). `out` receives `rows * cols` doubles.
///
/// # Safety
/// Buffers must match the given shape; `config` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn pdsm_attribute(
    model: *const PdsmModel,
    method: u32,
    x: *const f64,
    rows: usize,
    cols: usize,
    target_class: usize,
    config: *const PdsmAttributionConfig,
    out: *mut f64,
) -> PdsmStatus {
    guard(|| {
        let m = &*non_null(model, "model")?;
        let x = read_matrix(x, rows, cols, "x")?;
        let c = if config.is_null() {
            pdsm_attribution_config_default()
        } else {
            *config
        };
        let cfg = AttributionConfig {
            ig_steps: c.ig_steps as usize,
            gradshap_samples: c.gradshap_samples as usize,
            noise_sigma: (c.noise_sigma >= 0.0).then_some(c.noise_sigma),
            seed: c.seed,
            ..AttributionConfig::new(method_of(method)?)
        };
        let map = attribute(
            &m.inner,
            &x,
            target_class,
            &cfg,
            &BaselineProfile::zeros(rows),
        )?;
        write_out(map.data.as_slice(), out, "out")
    })
}

/// Phoneme mask of a `rows x cols` map against an `n_phonemes x ppg_frames`
/// posteriorgram using preset `PDSM_PRESET_*`. `mask_out` receives
/// `rows * cols` doubles; `on_frames_out` (optional) the covered frames.
///
/// # Safety
/// Buffers must match the given shapes.
#[no_mangle]
pub unsafe extern "C" fn pdsm_discretize(
    map: *const f64,
    rows: usize,
    cols: usize,
    ppg: *const f64,
    n_phonemes: usize,
    ppg_frames: usize,
    preset: u32,
    k: usize,
    mask_out: *mut f64,
    on_frames_out: *mut usize,
) -> PdsmStatus {
    guard(|| {
        let map = read_matrix(map, rows, cols, "map")?;
        let ppg = Posteriorgram::new(read_matrix(ppg, n_phonemes, ppg_frames, "ppg")?, Vec::new())?;
        let preset = match preset {
            PDSM_PRESET_TT2 => Preset::Tt2,
            PDSM_PRESET_FS2 => Preset::Fs2,
            other => return Err(Error::validation(format!("unknown preset code {other}")).into()),
        };
        let mask = pdsm::discretize::pdsm(&map, &ppg, &preset.config(k))?;
        write_out(mask.data.as_slice(), mask_out, "mask_out")?;
        if !on_frames_out.is_null() {
            *on_frames_out = mask.on_frames();
        }
        Ok(())
    })
}

/// `f_c(X) - f_c(X * (1 - M))` for a mask with entries in [0, 1].
///
/// # Safety
/// `x` and `mask` hold `rows * cols` doubles; `ff_out` is writable.
#[no_mangle]
pub unsafe extern "C" fn pdsm_faithfulness(
    model: *const PdsmModel,
    x: *const f64,
    mask: *const f64,
    rows: usize,
    cols: usize,
    target_class: usize,
    ff_out: *mut f64,
) -> PdsmStatus {
    guard(|| {
        let m = &*non_null(model, "model")?;
        let x = read_matrix(x, rows, cols, "x")?;
        let mask = read_matrix(mask, rows, cols, "mask")?;
        write_out(
            &[faithfulness(&m.inner, &x, &mask, target_class)?],
            ff_out,
            "ff_out",
        )
    })
}
