//! C ABI over `joint-asr`: load a checkpoint, transcribe audio, and call the
//! CTC loss and error-rate metrics.
//!
//! Every function returns a [`JasrStatus`]. On failure a message describing
//! the error is kept per thread and can be read with [`jasr_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through `out` parameters are released with
//! [`jasr_string_free`]. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use joint_asr::checkpoint::Checkpoint;
use joint_asr::decode::{cer, transcribe, wer, DecodeConfig, NgramLm};
use joint_asr::losses::ctc_forward;
use joint_asr::model::AcousticModel;
use joint_asr::tensor::Tensor;
use joint_asr::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JasrStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    InvalidUtf8 = 2,
    MissingPath = 3,
    /// Bad configuration or a malformed or mismatched file.
    Config = 4,
    /// Input that cannot be processed (too short, infeasible alignment,
    /// empty reference).
    Data = 5,
    /// Shape or contract violation in the arguments.
    InvalidArgument = 6,
    Internal = 7,
    /// A panic was caught at the boundary.
    Panic = 8,
}

/// A loaded acoustic model.
pub struct JasrModel {
    model: AcousticModel,
}

/// A loaded n-gram language model.
pub struct JasrLm {
    lm: NgramLm,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> JasrStatus {
    match e {
        Error::MissingPath(_) => JasrStatus::MissingPath,
        Error::Config(_) | Error::ConfigMismatch | Error::Format { .. } | Error::Json(_) => JasrStatus::Config,
        Error::InputTooShort { .. }
        | Error::AlignmentInfeasible { .. }
        | Error::UndefinedRate
        | Error::EmptyCorpus(_)
        | Error::NoNegatives => JasrStatus::Data,
        Error::Dimension { .. } | Error::Contract(_) => JasrStatus::InvalidArgument,
        _ => JasrStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (JasrStatus, String)>) -> JasrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JasrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            JasrStatus::Panic
        }
    }
}

fn lib<T>(r: joint_asr::Result<T>) -> Result<T, (JasrStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (JasrStatus, String) {
    (JasrStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (JasrStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (JasrStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (JasrStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jasr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn jasr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jasr_model_load(path: *const c_char, out: *mut *mut JasrModel) -> JasrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let model = lib(Checkpoint::load(Path::new(path)).and_then(|c| c.build_model()))?;
        *out = Box::into_raw(Box::new(JasrModel { model }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`jasr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jasr_model_free(model: *mut JasrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable scalars.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn jasr_model_num_params(model: *const JasrModel, out: *mut usize) -> JasrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.params().num_scalars();
        Ok(())
    })
}

/// Sample rate the model expects, in Hz.
///
/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn jasr_model_sample_rate(model: *const JasrModel, out: *mut usize) -> JasrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.config().sample_rate;
        Ok(())
    })
}

/// Loads an n-gram LM written by the `eval` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jasr_lm_load(path: *const c_char, out: *mut *mut JasrLm) -> JasrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let lm = lib(NgramLm::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(JasrLm { lm }));
        Ok(())
    })
}

/// Releases an LM handle. Null is ignored.
///
/// # Safety
/// `lm` must come from [`jasr_lm_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jasr_lm_free(lm: *mut JasrLm) {
    if !lm.is_null() {
        drop(Box::from_raw(lm));
    }
}

/// Transcribes raw samples. `beam_size` 0 selects best-path decoding; `lm`
/// may be null, otherwise it is fused with weights `alpha` and `beta` (which
/// needs `beam_size >= 1`). The text is returned in `*out` and must be freed
/// with [`jasr_string_free`].
///
/// # Safety
/// `samples` must point to `len` doubles; `model` and `out` must be valid;
/// `lm` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn jasr_transcribe(
    model: *const JasrModel,
    samples: *const f64,
    len: usize,
    beam_size: u32,
    lm: *const JasrLm,
    alpha: f64,
    beta: f64,
    out: *mut *mut c_char,
) -> JasrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let samples = slice_arg(samples, len, "samples")?;
        let lm = lm.as_ref().map(|l| &l.lm);
        if lm.is_some() && beam_size == 0 {
            return Err((JasrStatus::Config, "LM fusion needs beam_size >= 1".into()));
        }
        let cfg = DecodeConfig {
            beam_size: beam_size as usize,
            alpha,
            beta,
            ..DecodeConfig::default()
        };
        lib(cfg.validate())?;
        let text = lib(transcribe(&m.model, samples, &cfg, lm))?;
        *out = CString::new(text)
            .map_err(|_| (JasrStatus::Internal, "transcript contains NUL".to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jasr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Negative log-likelihood of `tokens` under row-major `frames × vocab`
/// log-probabilities. Infeasible targets give `+inf` with status OK.
///
/// # Safety
/// `logprobs` must point to `frames * vocab` doubles, `tokens` to `num_tokens`
/// values, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jasr_ctc_loss(
    logprobs: *const f64,
    frames: usize,
    vocab: usize,
    tokens: *const u32,
    num_tokens: usize,
    blank: u32,
    out: *mut f64,
) -> JasrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = frames
            .checked_mul(vocab)
            .ok_or_else(|| (JasrStatus::InvalidArgument, "frames * vocab overflows".to_string()))?;
        let lp = slice_arg(logprobs, n, "logprobs")?;
        let toks: Vec<usize> = slice_arg(tokens, num_tokens, "tokens")?.iter().map(|&t| t as usize).collect();
        let blank = blank as usize;
        if blank >= vocab || toks.iter().any(|&t| t >= vocab || t == blank) {
            return Err((JasrStatus::InvalidArgument, "token or blank id out of range".into()));
        }
        let t = lib(Tensor::new(vec![frames, vocab], lp.to_vec()))?;
        *out = lib(ctc_forward(&t, &toks, blank))?;
        Ok(())
    })
}

type Metric = fn(&str, &str) -> joint_asr::Result<joint_asr::decode::ErrorRate>;

unsafe fn rate(metric: Metric, reference: *const c_char, hypothesis: *const c_char, out: *mut f64) -> JasrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = str_arg(reference, "reference")?;
        let h = str_arg(hypothesis, "hypothesis")?;
        *out = lib(metric(r, h))?.rate;
        Ok(())
    })
}

/// Word error rate of `hypothesis` against `reference`.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn jasr_wer(reference: *const c_char, hypothesis: *const c_char, out: *mut f64) -> JasrStatus {
    rate(wer, reference, hypothesis, out)
}

/// Character error rate of `hypothesis` against `reference`.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn jasr_cer(reference: *const c_char, hypothesis: *const c_char, out: *mut f64) -> JasrStatus {
    rate(cer, reference, hypothesis, out)
}
