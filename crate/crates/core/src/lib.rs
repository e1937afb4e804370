//! Compute plane of a patch-level audio language model: residual-VQ audio
//! tokens, the per-codebook delay pattern, interleaved text/audio sequence
//! modeling over a small autodiff engine, and the tokenizer's training
//! losses (multi-scale mel reconstruction, commitment, hinge GAN, feature
//! matching).

pub mod cli;
pub mod dsp;
pub mod error;
pub mod framing;
pub mod ganloss;
pub mod model;
pub mod nn;
pub mod rvq;
pub mod tokenizer;
pub mod util;

pub use error::{Error, Result};
