use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid sample at position {0}")]
    InvalidSample(usize),
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("index out of range: {index} at layer {layer} (codebook size {size})")]
    IndexOutOfRange { index: usize, layer: usize, size: usize },
    #[error("inconsistent delay pattern at slot ({slot}, {layer})")]
    InconsistentDelay { slot: usize, layer: usize },
    #[error("context exceeded: {len} positions, limit {limit}")]
    ContextExceeded { len: usize, limit: usize },
    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
