//! C ABI over `unitprompt`: load a backbone and a prompt set from checkpoint
//! files, generate unit sequences, and compute the evaluation metrics.
//!
//! Every fallible function returns a [`UpStatus`]. On failure the message of
//! the most recent error on the calling thread is available from
//! [`up_last_error_message`]. Handles are opaque and must be released with
//! their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use unitprompt::checkpoint::{load_backbone, load_prompts};
use unitprompt::metrics::{bleu, edit_distance, error_rate};
use unitprompt::prompt::{generate, DecodeConfig, DecodeMode};
use unitprompt::{BackboneModel, Error, PromptSet};

/// Greedy decoding: the most probable unit at every step.
pub const UP_DECODE_GREEDY: u32 = 0;
/// Temperature sampling, seeded by `UpDecodeConfig::seed`.
pub const UP_DECODE_SAMPLE: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8, or an enum-like value was unknown.
    InvalidArgument = 2,
    /// Invalid configuration or decoding parameters.
    Config = 3,
    /// A file could not be read or written.
    Io = 4,
    /// A checkpoint file is malformed or of the wrong kind.
    Checkpoint = 5,
    /// The prompt set does not fit the backbone.
    Mismatch = 6,
    /// A unit id lies outside the vocabulary.
    Vocabulary = 7,
    /// A sequence does not fit the model's position budget.
    Length = 8,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 9,
    /// Any other library error.
    Failed = 10,
    /// The library panicked; this is a bug.
    Panic = 11,
}

/// Decoding parameters. `mode` is `UP_DECODE_GREEDY` or `UP_DECODE_SAMPLE`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct UpDecodeConfig {
    pub mode: u32,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

/// Opaque frozen backbone.
pub struct UpBackbone {
    model: BackboneModel,
}

/// Opaque prompt set.
pub struct UpPrompts {
    prompts: PromptSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> UpStatus {
    match err {
        Error::Config(_) | Error::InvalidVocabulary(_) => UpStatus::Config,
        Error::Io { .. } | Error::Path { .. } => UpStatus::Io,
        Error::Checkpoint { .. } => UpStatus::Checkpoint,
        Error::Mismatch(_) => UpStatus::Mismatch,
        Error::Vocabulary { .. } => UpStatus::Vocabulary,
        Error::Length { .. } | Error::PromptLength { .. } => UpStatus::Length,
        _ => UpStatus::Failed,
    }
}

fn fail(status: UpStatus, message: impl Into<String>) -> UpStatus {
    set_last_error(message.into());
    status
}

/// Runs `body`, converting library errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), UpStatus>) -> UpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => UpStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(UpStatus::Panic, "internal panic in unitprompt"),
    }
}

fn lib<T>(r: unitprompt::Result<T>) -> Result<T, UpStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), UpStatus> {
    if p.is_null() {
        Err(fail(UpStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `path` must be null or a NUL-terminated string.
unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, UpStatus> {
    non_null(path, "path")?;
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(path) };
    s.to_str()
        .map(Path::new)
        .map_err(|_| fail(UpStatus::InvalidArgument, "path is not valid UTF-8"))
}

/// # Safety
/// `data` must be null only when `len == 0`, else point to `len` readable units.
unsafe fn units_arg<'a>(data: *const u32, len: usize, name: &str) -> Result<&'a [u32], UpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(data, name)?;
    // SAFETY: non-null with `len` readable elements per the caller contract.
    Ok(unsafe { slice::from_raw_parts(data, len) })
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn up_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a backbone checkpoint and freezes it.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn up_backbone_load(path: *const c_char, out: *mut *mut UpBackbone) -> UpStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        let mut model = lib(load_backbone(path))?;
        model.freeze();
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(UpBackbone { model })) };
        Ok(())
    })
}

/// Releases a backbone. Null is ignored.
///
/// # Safety
/// `backbone` must come from `up_backbone_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn up_backbone_free(backbone: *mut UpBackbone) {
    if !backbone.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `up_backbone_load`.
        drop(unsafe { Box::from_raw(backbone) });
    }
}

/// Vocabulary size of the backbone, reserved ids included.
///
/// # Safety
/// `backbone` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn up_backbone_vocab_size(backbone: *const UpBackbone, out: *mut u32) -> UpStatus {
    guard(|| {
        non_null(backbone, "backbone")?;
        non_null(out, "out")?;
        // SAFETY: live handle and writable output per the caller contract.
        unsafe { *out = (*backbone).model.config().vocab_size };
        Ok(())
    })
}

/// Loads a prompt checkpoint. When `backbone` is non-null the prompt set is
/// checked against it and `UpStatus::Mismatch` is returned if it does not fit.
///
/// # Safety
/// `path` must be a NUL-terminated string; `backbone` null or a live handle;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn up_prompts_load(
    path: *const c_char,
    backbone: *const UpBackbone,
    out: *mut *mut UpPrompts,
) -> UpStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        // SAFETY: null or a live handle.
        let target = unsafe { backbone.as_ref() }.map(|b| b.model.config());
        let prompts = lib(load_prompts(path, target))?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(UpPrompts { prompts })) };
        Ok(())
    })
}

/// Releases a prompt set. Null is ignored.
///
/// # Safety
/// `prompts` must come from `up_prompts_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn up_prompts_free(prompts: *mut UpPrompts) {
    if !prompts.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `up_prompts_load`.
        drop(unsafe { Box::from_raw(prompts) });
    }
}

/// Prompt length `L` of a prompt set.
///
/// # Safety
/// `prompts` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn up_prompts_len(prompts: *const UpPrompts, out: *mut usize) -> UpStatus {
    guard(|| {
        non_null(prompts, "prompts")?;
        non_null(out, "out")?;
        // SAFETY: live handle and writable output.
        unsafe { *out = (*prompts).prompts.len() };
        Ok(())
    })
}

/// Generates a unit sequence from `src`, conditioned on `prompts` (null for
/// the bare backbone). The units are written to `out` and their count to
/// `out_len`. If `out_cap` is too small, nothing is written to `out`,
/// `out_len` receives the required length and `UpStatus::BufferTooSmall` is
/// returned; decoding is deterministic, so the call can be repeated.
///
/// # Safety
/// `backbone` must be a live handle, `prompts` null or a live handle, `src`
/// readable for `src_len` units, `config` readable, `out` writable for
/// `out_cap` units and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn up_generate(
    backbone: *const UpBackbone,
    prompts: *const UpPrompts,
    src: *const u32,
    src_len: usize,
    config: *const UpDecodeConfig,
    out: *mut u32,
    out_cap: usize,
    out_len: *mut usize,
) -> UpStatus {
    guard(|| {
        non_null(backbone, "backbone")?;
        non_null(config, "config")?;
        non_null(out_len, "out_len")?;
        // SAFETY: per the caller contract.
        let (model, prompts, src, c) = unsafe {
            (
                &(*backbone).model,
                prompts.as_ref().map(|p| &p.prompts),
                units_arg(src, src_len, "src")?,
                *config,
            )
        };
        let mode = match c.mode {
            UP_DECODE_GREEDY => DecodeMode::Greedy,
            UP_DECODE_SAMPLE => DecodeMode::Sample,
            m => return Err(fail(UpStatus::InvalidArgument, format!("unknown decode mode {m}"))),
        };
        let cfg = DecodeConfig {
            mode,
            temperature: c.temperature,
            max_len: c.max_len,
            seed: c.seed,
        };
        let units = lib(generate(model, prompts, src, &cfg))?;
        // SAFETY: `out_len` is non-null and writable.
        unsafe { *out_len = units.len() };
        if units.len() > out_cap {
            return Err(fail(
                UpStatus::BufferTooSmall,
                format!("output needs {} units, buffer holds {out_cap}", units.len()),
            ));
        }
        if !units.is_empty() {
            non_null(out, "out")?;
            // SAFETY: `out` is writable for `out_cap >= units.len()` units.
            unsafe { ptr::copy_nonoverlapping(units.as_slice().as_ptr(), out, units.len()) };
        }
        Ok(())
    })
}

/// Levenshtein distance between two unit sequences.
///
/// # Safety
/// Each sequence must be readable for its length; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn up_edit_distance(
    reference: *const u32,
    reference_len: usize,
    hypothesis: *const u32,
    hypothesis_len: usize,
    out: *mut usize,
) -> UpStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: per the caller contract.
        let (r, h) = unsafe {
            (
                units_arg(reference, reference_len, "reference")?,
                units_arg(hypothesis, hypothesis_len, "hypothesis")?,
            )
        };
        // SAFETY: `out` is writable.
        unsafe { *out = edit_distance(r, h).distance };
        Ok(())
    })
}

/// Edit distance divided by the reference length (0 for two empty sequences).
///
/// # Safety
/// Each sequence must be readable for its length; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn up_error_rate(
    reference: *const u32,
    reference_len: usize,
    hypothesis: *const u32,
    hypothesis_len: usize,
    out: *mut f64,
) -> UpStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: per the caller contract.
        let (r, h) = unsafe {
            (
                units_arg(reference, reference_len, "reference")?,
                units_arg(hypothesis, hypothesis_len, "hypothesis")?,
            )
        };
        // SAFETY: `out` is writable.
        unsafe { *out = error_rate(r, h) };
        Ok(())
    })
}

/// Sentence BLEU-1 through BLEU-`max_n` on a 0–100 scale, written to
/// `out[0..max_n]`.
///
/// # Safety
/// Each sequence must be readable for its length; `out` writable for `max_n` values.
#[no_mangle]
pub unsafe extern "C" fn up_bleu(
    candidate: *const u32,
    candidate_len: usize,
    reference: *const u32,
    reference_len: usize,
    max_n: usize,
    out: *mut f64,
) -> UpStatus {
    guard(|| {
        if max_n == 0 {
            return Err(fail(UpStatus::InvalidArgument, "max_n must be positive"));
        }
        non_null(out, "out")?;
        // SAFETY: per the caller contract.
        let (c, r) = unsafe {
            (
                units_arg(candidate, candidate_len, "candidate")?,
                units_arg(reference, reference_len, "reference")?,
            )
        };
        let scores = bleu(c, r, max_n);
        // SAFETY: `out` is writable for `max_n` values.
        unsafe { ptr::copy_nonoverlapping(scores.as_ptr(), out, max_n) };
        Ok(())
    })
}
