//! Audio patches, the per-codebook delay pattern, text/audio interleaving and
//! the token file format.

mod delay;
mod interleave;
mod patch;
mod tokenfile;

pub use delay::{delay_apply, delay_remove, DelayConfig, DelayedPatch};
pub use interleave::{
    interleave_schedule, loss_weight_mask, Element, ElementWeights, InterleavedSequence,
};
pub use patch::{patchify, unpatchify, Patch};
pub use tokenfile::TokenFile;

/// Frames per patch.
pub const DEFAULT_GROUP: usize = 4;
/// Tokenizer frame rate in Hz.
pub const FRAME_RATE_HZ: f64 = 25.0;

/// Bits per second of a token stream: `frame_rate * sum_r log2(K_r)`.
pub fn bitrate_bps(frame_rate_hz: f64, codebook_sizes: &[usize]) -> f64 {
    frame_rate_hz * codebook_sizes.iter().map(|&k| (k as f64).log2()).sum::<f64>()
}

/// Patches per second at `group` frames per patch.
pub fn patch_rate_hz(frame_rate_hz: f64, group: usize) -> f64 {
    frame_rate_hz / group as f64
}
