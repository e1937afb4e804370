//! Waveforms, STFT, log-mel spectrograms, the multi-scale mel reconstruction
//! loss, and a Griffin-Lim inverse for listening to reconstructions.

mod griffin_lim;
mod mel;
mod resample;
mod stft;
mod wav;

pub use griffin_lim::{griffin_lim, griffin_lim_seeded};
pub use mel::{
    encoder_mel, mel_filterbank, mel_spectrogram, mel_spectrogram_with, multiscale_mel_loss, MelParams, MelScaleConfig,
    MelSpec, ENCODER_MEL, LOG_FLOOR, LOSS_SCALES,
};
pub use resample::resample_linear;
pub use stft::{hann_window, stft, Spectrogram, StftPlan};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Canonical tokenizer sample rate.
pub const SAMPLE_RATE: u32 = 24_000;

/// Mono audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Errors on empty input, a zero sample rate, or a non-finite sample.
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        match self.samples.iter().position(|s| !s.is_finite()) {
            Some(i) => Err(Error::InvalidSample(i)),
            None => Ok(()),
        }
    }

    /// `amplitude * sin(2 pi f t)`.
    pub fn sine(freq: f64, amplitude: f64, samples: usize, sample_rate: u32) -> Self {
        let w = 2.0 * std::f64::consts::PI * freq / sample_rate as f64;
        Self::new((0..samples).map(|n| amplitude * (w * n as f64).sin()).collect(), sample_rate)
    }
}
