use super::stft::StftPlan;
use super::Waveform;
use crate::error::{Error, Result};

/// Floor applied before the log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Scales compared by [`multiscale_mel_loss`].
pub const LOSS_SCALES: [u32; 3] = [5, 6, 7];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelParams {
    pub n_mels: usize,
    pub window: usize,
    pub hop: usize,
}

/// Geometry of the mel spectrogram at scale `i`: `2^i` bins, a window of
/// `15 * 2^(i-1)` samples and a hop of half that.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MelScaleConfig {
    pub scale: u32,
}

impl MelScaleConfig {
    pub fn new(scale: u32) -> Result<Self> {
        if !(3..=16).contains(&scale) {
            return Err(Error::Config(format!("mel scale index must be in 3..=16, got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn params(&self) -> MelParams {
        let i = self.scale;
        MelParams { n_mels: 1 << i, window: 15 << (i - 1), hop: 15 << (i - 2) }
    }
}

/// Mel input of the tokenizer encoder: 100 frames per second at 24 kHz.
pub const ENCODER_MEL: MelParams = MelParams { n_mels: 128, window: 480, hop: 240 };

/// Log-mel energies, `frames x n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub frames: usize,
    pub n_mels: usize,
    pub data: Vec<f64>,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub scale_index: Option<u32>,
}

impl MelSpec {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn params(&self) -> MelParams {
        MelParams { n_mels: self.n_mels, window: self.window, hop: self.hop }
    }

    /// Mean absolute difference between two spectrograms of equal shape.
    pub fn mean_l1(&self, other: &MelSpec) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::LengthMismatch(self.data.len(), other.data.len()));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.data.len() as f64)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= MIN_LOG_HZ {
        min_log_mel + (f / MIN_LOG_HZ).ln() / logstep
    } else {
        f / F_SP
    }
}

fn mel_to_hz(m: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        MIN_LOG_HZ * (logstep * (m - min_log_mel)).exp()
    } else {
        F_SP * m
    }
}

/// Slaney-style triangular filters on the Slaney mel scale from 0 Hz to
/// Nyquist, area-normalized. `n_mels x (n_fft / 2 + 1)`, row-major.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let sr = sample_rate as f64;
    let fft_freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sr / n_fft as f64).collect();
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(sr / 2.0));
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0.0; n_mels * bins];
    for m in 0..n_mels {
        let (f0, f1, f2) = (pts[m], pts[m + 1], pts[m + 2]);
        let norm = 2.0 / (f2 - f0);
        for (k, &f) in fft_freqs.iter().enumerate() {
            let lower = (f - f0) / (f1 - f0);
            let upper = (f2 - f) / (f2 - f1);
            fb[m * bins + k] = lower.min(upper).max(0.0) * norm;
        }
    }
    fb
}

pub(crate) fn log_mel_from_magnitudes(mags: &[f64], frames: usize, bins: usize, fb: &[f64], n_mels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(frames * n_mels);
    for t in 0..frames {
        let mag = &mags[t * bins..(t + 1) * bins];
        for m in 0..n_mels {
            let e: f64 = fb[m * bins..(m + 1) * bins].iter().zip(mag).map(|(a, b)| a * b).sum();
            out.push(e.max(LOG_FLOOR).ln());
        }
    }
    out
}

/// Log-mel spectrogram of STFT magnitudes with the given geometry.
pub fn mel_spectrogram_with(w: &Waveform, p: MelParams) -> Result<MelSpec> {
    w.validate()?;
    if p.n_mels == 0 || p.n_mels > p.window / 2 + 1 {
        return Err(Error::Config(format!("{} mel bins do not fit a {}-point FFT", p.n_mels, p.window)));
    }
    if w.len() < p.window {
        return Err(Error::InputTooShort { len: w.len(), need: p.window });
    }
    let plan = StftPlan::new(p.window, p.hop)?;
    let spec = plan.forward(&w.samples)?;
    let fb = mel_filterbank(p.n_mels, p.window, w.sample_rate);
    let data = log_mel_from_magnitudes(&spec.magnitudes(), spec.frames, spec.bins, &fb, p.n_mels);
    Ok(MelSpec {
        frames: spec.frames,
        n_mels: p.n_mels,
        data,
        window: p.window,
        hop: p.hop,
        sample_rate: w.sample_rate,
        scale_index: None,
    })
}

/// Mel spectrogram at scale `i`: `2^i` bins, window `15 * 2^(i-1)`.
pub fn mel_spectrogram(w: &Waveform, scale: u32) -> Result<MelSpec> {
    let cfg = MelScaleConfig::new(scale)?;
    let mut m = mel_spectrogram_with(w, cfg.params())?;
    m.scale_index = Some(scale);
    Ok(m)
}

/// The 100 Hz, 128-bin mel fed to the tokenizer.
pub fn encoder_mel(w: &Waveform) -> Result<MelSpec> {
    mel_spectrogram_with(w, ENCODER_MEL)
}

/// Sum over scales 5, 6, 7 of the mean absolute log-mel difference.
pub fn multiscale_mel_loss(x: &Waveform, y: &Waveform) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.sample_rate != y.sample_rate {
        return Err(Error::Config(format!("sample rate mismatch: {} vs {}", x.sample_rate, y.sample_rate)));
    }
    LOSS_SCALES.iter().try_fold(0.0, |acc, &i| {
        let a = mel_spectrogram(x, i)?;
        let b = mel_spectrogram(y, i)?;
        Ok(acc + a.mean_l1(&b)?)
    })
}
