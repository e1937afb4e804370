//! C ABI over `mimt-core`.
//!
//! Every fallible call returns a [`MimtStatus`]. On failure a message is kept
//! per thread and can be fetched with [`mimt_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `_free` function. Output buffers are caller-allocated; the required length
//! is always computable from the inputs, and a short buffer yields
//! `MIMT_STATUS_BUFFER_TOO_SMALL`.
//!
//! Token slots are `uint16_t` with [`MIMT_EMPTY`] marking an empty slot.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use mimt_core::dsp::{multiscale_mel_loss, Waveform};
use mimt_core::framing::{bitrate_bps, delay_apply, delay_remove, DelayConfig, DelayedPatch, Patch, TokenFile};
use mimt_core::rvq::{AudioTokenMatrix, RvqState, Slot};
use mimt_core::Error;

/// Slot value meaning "no token".
pub const MIMT_EMPTY: u16 = 0xFFFF;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MimtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    IndexOutOfRange = 4,
    Shape = 5,
    Format = 6,
    Io = 7,
    Panic = 8,
}

/// Trained residual quantizer.
pub struct MimtRvq(RvqState);

/// Contents of a token file.
pub struct MimtTokenFile(TokenFile);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (MimtStatus, String);

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn from_core(e: Error) -> Failure {
    let status = match &e {
        Error::IndexOutOfRange { .. } => MimtStatus::IndexOutOfRange,
        Error::Shape { .. }
        | Error::LengthMismatch(..)
        | Error::DimensionMismatch { .. }
        | Error::InconsistentDelay { .. } => MimtStatus::Shape,
        Error::BadMagic { .. } | Error::Format(_) => MimtStatus::Format,
        Error::Io(_) => MimtStatus::Io,
        _ => MimtStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MimtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MimtStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MimtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (MimtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    (MimtStatus::InvalidArgument, msg.into())
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len < need {
        return Err((MimtStatus::BufferTooSmall, format!("{what} holds {len}, need {need}")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(h: *const T) -> Result<&'a T, Failure> {
    h.as_ref().ok_or_else(|| null("handle"))
}

fn to_slot(v: u16) -> Slot {
    (v != MIMT_EMPTY).then_some(v)
}

fn from_slot(s: Slot) -> u16 {
    s.unwrap_or(MIMT_EMPTY)
}

fn delay_config(delays: &[usize]) -> Result<DelayConfig, Failure> {
    DelayConfig::new(delays.to_vec()).map_err(from_core)
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into the library from the same thread.
#[no_mangle]
pub extern "C" fn mimt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mimt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `frame_rate * sum_r log2(sizes[r])`. Returns NaN on a null pointer.
#[no_mangle]
pub unsafe extern "C" fn mimt_bitrate_bps(frame_rate_hz: f64, codebook_sizes: *const usize, layers: usize) -> f64 {
    match input(codebook_sizes, layers, "codebook_sizes") {
        Ok(s) => bitrate_bps(frame_rate_hz, s),
        Err(_) => f64::NAN,
    }
}

/// Multi-scale log-mel L1 distance between two equal-length signals.
#[no_mangle]
pub unsafe extern "C" fn mimt_mel_loss(
    a: *const f64,
    b: *const f64,
    len: usize,
    sample_rate: u32,
    out: *mut f64,
) -> MimtStatus {
    guard(|| {
        let a = Waveform::new(input(a, len, "a")?.to_vec(), sample_rate);
        let b = Waveform::new(input(b, len, "b")?.to_vec(), sample_rate);
        let v = multiscale_mel_loss(&a, &b).map_err(from_core)?;
        *output(out, 1, 1, "out")?.first_mut().unwrap() = v;
        Ok(())
    })
}

// ---- quantizer ----

/// Loads a codebook checkpoint from disk.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_load(path: *const c_char, out: *mut *mut MimtRvq) -> MimtStatus {
    guard(|| {
        let state = RvqState::load(path_arg(path)?).map_err(from_core)?;
        handle_out(out, MimtRvq(state))
    })
}

/// Parses a codebook checkpoint held in memory.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_from_bytes(data: *const u8, len: usize, out: *mut *mut MimtRvq) -> MimtStatus {
    guard(|| {
        let state = RvqState::read_from(input(data, len, "data")?).map_err(from_core)?;
        handle_out(out, MimtRvq(state))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_free(rvq: *mut MimtRvq) {
    if !rvq.is_null() {
        drop(Box::from_raw(rvq));
    }
}

/// Vector dimension, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_dim(rvq: *const MimtRvq) -> usize {
    rvq.as_ref().map_or(0, |r| r.0.dim())
}

/// Number of codebooks, 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_layers(rvq: *const MimtRvq) -> usize {
    rvq.as_ref().map_or(0, |r| r.0.layers().len())
}

/// Entries in codebook `layer`, 0 if out of range.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_codebook_size(rvq: *const MimtRvq, layer: usize) -> usize {
    rvq.as_ref().and_then(|r| r.0.layers().get(layer)).map_or(0, |c| c.size())
}

/// Quantizes `frames` row-major vectors with the first `layers` codebooks.
/// `out_indices` receives `frames * layers` indices.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_quantize(
    rvq: *const MimtRvq,
    x: *const f64,
    frames: usize,
    layers: usize,
    out_indices: *mut u16,
    out_len: usize,
) -> MimtStatus {
    guard(|| {
        let rvq = &handle(rvq)?.0;
        if layers == 0 || layers > rvq.layers().len() {
            return Err(invalid(format!("layers must be in 1..={}, got {layers}", rvq.layers().len())));
        }
        let x = input(x, frames * rvq.dim(), "x")?;
        let out = output(out_indices, out_len, frames * layers, "out_indices")?;
        let q = rvq.truncated(layers).quantize(x).map_err(from_core)?;
        out.copy_from_slice(q.tokens.indices());
        Ok(())
    })
}

/// Sums the selected entries. `out` receives `frames * dim` values.
#[no_mangle]
pub unsafe extern "C" fn mimt_rvq_dequantize(
    rvq: *const MimtRvq,
    indices: *const u16,
    frames: usize,
    layers: usize,
    out: *mut f64,
    out_len: usize,
) -> MimtStatus {
    guard(|| {
        let rvq = &handle(rvq)?.0;
        if layers == 0 || layers > rvq.layers().len() {
            return Err(invalid(format!("layers must be in 1..={}, got {layers}", rvq.layers().len())));
        }
        let idx = input(indices, frames * layers, "indices")?;
        let out = output(out, out_len, frames * rvq.dim(), "out")?;
        let sizes = rvq.codebook_sizes()[..layers].to_vec();
        let tokens = AudioTokenMatrix::new(sizes, idx.to_vec()).map_err(from_core)?;
        out.copy_from_slice(&rvq.dequantize(&tokens).map_err(from_core)?);
        Ok(())
    })
}

// ---- delay pattern ----

/// Rows in the delayed form of a `group`-frame patch: `group + max(delays)`.
/// Returns 0 on invalid delays.
#[no_mangle]
pub unsafe extern "C" fn mimt_delayed_len(delays: *const usize, layers: usize, group: usize) -> usize {
    input(delays, layers, "delays")
        .ok()
        .and_then(|d| DelayConfig::new(d.to_vec()).ok())
        .map_or(0, |d| d.delayed_len(group))
}

/// Shifts layer `r` of a `group x layers` patch down by `delays[r]` rows.
/// `out` receives `mimt_delayed_len(delays, layers, group) * layers` slots.
#[no_mangle]
pub unsafe extern "C" fn mimt_delay_apply(
    patch: *const u16,
    group: usize,
    layers: usize,
    delays: *const usize,
    out: *mut u16,
    out_len: usize,
) -> MimtStatus {
    guard(|| {
        let cfg = delay_config(input(delays, layers, "delays")?)?;
        let slots = input(patch, group * layers, "patch")?.iter().map(|&v| to_slot(v)).collect();
        let p = Patch::new(layers, slots).map_err(from_core)?;
        let d = delay_apply(&p, &cfg).map_err(from_core)?;
        let out = output(out, out_len, d.slots().len(), "out")?;
        for (o, &s) in out.iter_mut().zip(d.slots()) {
            *o = from_slot(s);
        }
        Ok(())
    })
}

/// Inverse of [`mimt_delay_apply`]. `rows` must equal the delayed length for
/// `group`; `out` receives `group * layers` slots.
#[no_mangle]
pub unsafe extern "C" fn mimt_delay_remove(
    delayed: *const u16,
    rows: usize,
    layers: usize,
    delays: *const usize,
    group: usize,
    out: *mut u16,
    out_len: usize,
) -> MimtStatus {
    guard(|| {
        let cfg = delay_config(input(delays, layers, "delays")?)?;
        let slots = input(delayed, rows * layers, "delayed")?.iter().map(|&v| to_slot(v)).collect();
        let d = DelayedPatch::from_slots(layers, slots).map_err(from_core)?;
        let p = delay_remove(&d, &cfg, group).map_err(from_core)?;
        let out = output(out, out_len, p.slots().len(), "out")?;
        for (o, &s) in out.iter_mut().zip(p.slots()) {
            *o = from_slot(s);
        }
        Ok(())
    })
}

// ---- token files ----

/// Builds a token file from `frames * layers` row-major slots.
#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_new(
    codebook_sizes: *const u16,
    layers: usize,
    slots: *const u16,
    frames: usize,
    group: u8,
    out: *mut *mut MimtTokenFile,
) -> MimtStatus {
    guard(|| {
        if layers == 0 || layers > u8::MAX as usize {
            return Err(invalid(format!("layers must be in 1..=255, got {layers}")));
        }
        let sizes = input(codebook_sizes, layers, "codebook_sizes")?.to_vec();
        let slots: Vec<Slot> = input(slots, frames * layers, "slots")?.iter().map(|&v| to_slot(v)).collect();
        for (i, s) in slots.iter().enumerate() {
            let layer = i % layers;
            if let Some(v) = *s {
                if v >= sizes[layer] {
                    return Err(from_core(Error::IndexOutOfRange { index: v as usize, layer, size: sizes[layer] as usize }));
                }
            }
        }
        handle_out(out, MimtTokenFile(TokenFile { frame_rate: (25, 1), group, codebook_sizes: sizes, slots }))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_read(path: *const c_char, out: *mut *mut MimtTokenFile) -> MimtStatus {
    guard(|| {
        let bytes = std::fs::read(path_arg(path)?).map_err(|e| from_core(e.into()))?;
        let tf = TokenFile::from_bytes(&bytes).map_err(from_core)?;
        handle_out(out, MimtTokenFile(tf))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_from_bytes(data: *const u8, len: usize, out: *mut *mut MimtTokenFile) -> MimtStatus {
    guard(|| {
        let tf = TokenFile::from_bytes(input(data, len, "data")?).map_err(from_core)?;
        handle_out(out, MimtTokenFile(tf))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_write(tokens: *const MimtTokenFile, path: *const c_char) -> MimtStatus {
    guard(|| {
        let tf = &handle(tokens)?.0;
        let bytes = tf.to_bytes().map_err(from_core)?;
        std::fs::write(path_arg(path)?, bytes).map_err(|e| from_core(e.into()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_free(tokens: *mut MimtTokenFile) {
    if !tokens.is_null() {
        drop(Box::from_raw(tokens));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_frames(tokens: *const MimtTokenFile) -> usize {
    tokens.as_ref().map_or(0, |t| t.0.frames())
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_layers(tokens: *const MimtTokenFile) -> usize {
    tokens.as_ref().map_or(0, |t| t.0.layers())
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_group(tokens: *const MimtTokenFile) -> u8 {
    tokens.as_ref().map_or(0, |t| t.0.group)
}

#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_codebook_size(tokens: *const MimtTokenFile, layer: usize) -> u16 {
    tokens.as_ref().and_then(|t| t.0.codebook_sizes.get(layer).copied()).unwrap_or(0)
}

/// Copies the `frames * layers` slots out.
#[no_mangle]
pub unsafe extern "C" fn mimt_tokens_slots(tokens: *const MimtTokenFile, out: *mut u16, out_len: usize) -> MimtStatus {
    guard(|| {
        let tf = &handle(tokens)?.0;
        let out = output(out, out_len, tf.slots.len(), "out")?;
        for (o, &s) in out.iter_mut().zip(&tf.slots) {
            *o = from_slot(s);
        }
        Ok(())
    })
}
