use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{Error, Result};

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided complex spectrogram, `frames x bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// STFT with a Hann window scaled to unit sum (a DC input of amplitude `a`
/// has `|X[0]| = a`), `n_fft = window`, and centered frames over a
/// reflect-padded signal.
pub struct StftPlan {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    window_sum: f64,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan").field("n_fft", &self.n_fft).field("hop", &self.hop).finish()
    }
}

impl StftPlan {
    pub fn new(window_size: usize, hop: usize) -> Result<Self> {
        if window_size < 2 || hop == 0 || hop > window_size {
            return Err(Error::Config(format!("invalid STFT geometry: window {window_size}, hop {hop}")));
        }
        let window = hann_window(window_size);
        let window_sum = window.iter().sum();
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft: window_size,
            hop,
            window,
            window_sum,
            fft: planner.plan_fft_forward(window_size),
            ifft: planner.plan_fft_inverse(window_size),
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn pad(&self) -> usize {
        self.n_fft / 2
    }

    /// Frame count for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        1 + (len + 2 * self.pad() - self.n_fft) / self.hop
    }

    /// The analysis window divided by its sum.
    pub fn normalized_window(&self) -> Vec<f64> {
        self.window.iter().map(|w| w / self.window_sum).collect()
    }

    /// For each frame and window offset, the index into an unpadded signal of
    /// `len` samples that the reflect-padded frame reads. `frames * n_fft` entries.
    pub fn frame_indices(&self, len: usize) -> Vec<usize> {
        let pad = self.pad() as isize;
        let n = len as isize;
        let src = |i: isize| -> usize {
            let j = i - pad;
            let j = if j < 0 { -j } else if j >= n { 2 * (n - 1) - j } else { j };
            j as usize
        };
        (0..self.frames_for(len))
            .flat_map(|t| (0..self.n_fft).map(move |k| src((t * self.hop + k) as isize)))
            .collect()
    }

    fn reflect_pad(&self, x: &[f64]) -> Vec<f64> {
        let pad = self.pad();
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        out.extend((1..=pad).rev().map(|k| x[k]));
        out.extend_from_slice(x);
        out.extend((1..=pad).map(|k| x[n - 1 - k]));
        out
    }

    pub fn forward(&self, x: &[f64]) -> Result<Spectrogram> {
        if x.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = x.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidSample(i));
        }
        if x.len() <= self.pad() {
            return Err(Error::InputTooShort { len: x.len(), need: self.pad() + 1 });
        }
        let padded = self.reflect_pad(x);
        let frames = self.frames_for(x.len());
        let bins = self.bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.window_sum;
        for t in 0..frames {
            let seg = &padded[t * self.hop..t * self.hop + self.n_fft];
            for ((b, s), w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex64::new(s * w * scale, 0.0);
            }
            self.fft.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram { frames, bins, data })
    }

    /// Least-squares inverse by weighted overlap-add. Returns `len` samples.
    pub fn inverse(&self, spec: &Spectrogram, len: usize) -> Vec<f64> {
        let n = self.n_fft;
        let total = n + (spec.frames.saturating_sub(1)) * self.hop;
        let mut num = vec![0.0; total];
        let mut den = vec![0.0; total];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        // irfft of a normalized frame gives x * w / window_sum
        let scale = self.window_sum / n as f64;
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            buf[..spec.bins].copy_from_slice(frame);
            for k in spec.bins..n {
                buf[k] = frame[n - k].conj();
            }
            buf[0].im = 0.0;
            if n % 2 == 0 {
                buf[n / 2].im = 0.0;
            }
            self.ifft.process(&mut buf);
            let off = t * self.hop;
            for i in 0..n {
                num[off + i] += buf[i].re * scale * self.window[i];
                den[off + i] += self.window[i] * self.window[i];
            }
        }
        let pad = self.pad();
        (0..len)
            .map(|i| {
                let j = i + pad;
                if j < total && den[j] > 1e-10 {
                    num[j] / den[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

pub fn stft(w: &Waveform, window_size: usize, hop: usize) -> Result<Spectrogram> {
    StftPlan::new(window_size, hop)?.forward(&w.samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_dft(frame: &[f64], k: usize) -> Complex64 {
        let n = frame.len() as f64;
        frame
            .iter()
            .enumerate()
            .map(|(i, &x)| Complex64::from_polar(x, -2.0 * PI * k as f64 * i as f64 / n))
            .sum()
    }

    #[test]
    fn zeros_give_zero_spectrogram() {
        let s = stft(&Waveform::new(vec![0.0; 960], 24_000), 240, 120).unwrap();
        assert_eq!(s.frames, 9);
        assert!(s.data.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn sine_peak_matches_direct_dft() {
        let w = Waveform::sine(1000.0, 0.5, 9600, 24_000);
        let plan = StftPlan::new(960, 480).unwrap();
        let s = plan.forward(&w.samples).unwrap();
        let t = 5;
        let frame = s.frame(t);
        let peak = (0..s.bins).max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm())).unwrap();
        assert_eq!(peak, 40);
        // interior frame, no padding involved
        let win = plan.normalized_window();
        let seg: Vec<f64> = (0..960).map(|i| w.samples[t * 480 - 480 + i] * win[i]).collect();
        for k in [0, 39, 40, 41, 200] {
            let r = reference_dft(&seg, k);
            assert!((r - frame[k]).norm() < 1e-10, "bin {k}");
        }
    }

    #[test]
    fn dc_has_unit_magnitude() {
        let s = stft(&Waveform::new(vec![0.7; 2000], 24_000), 480, 240).unwrap();
        assert!((s.frame(3)[0].norm() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn parseval() {
        let mut x = vec![0.0; 1200];
        for (i, v) in x.iter_mut().enumerate() {
            *v = ((i * 37 % 101) as f64 / 50.0 - 1.0) * 0.3;
        }
        let plan = StftPlan::new(240, 120).unwrap();
        let s = plan.forward(&x).unwrap();
        let win = plan.normalized_window();
        let t = 4;
        let seg: Vec<f64> = (0..240).map(|i| x[t * 120 - 120 + i] * win[i]).collect();
        let energy: f64 = seg.iter().map(|v| v * v).sum::<f64>() * 240.0;
        let f = s.frame(t);
        let spec: f64 = f[0].norm_sqr() + f[120].norm_sqr() + 2.0 * f[1..120].iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!((spec - energy).abs() <= 1e-6 * energy);
    }

    #[test]
    fn inverse_recovers_signal() {
        let w = Waveform::sine(440.0, 0.4, 4800, 24_000);
        let plan = StftPlan::new(480, 240).unwrap();
        let s = plan.forward(&w.samples).unwrap();
        let back = plan.inverse(&s, w.len());
        let err = back.iter().zip(&w.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn silence_padding_keeps_interior_frames() {
        let mut x: Vec<f64> = (0..2400).map(|i| ((i as f64) * 0.013).sin() * 0.2).collect();
        let plan = StftPlan::new(480, 240).unwrap();
        let a = plan.forward(&x).unwrap();
        x.extend(std::iter::repeat_n(0.0, 960));
        let b = plan.forward(&x).unwrap();
        assert_eq!(b.frames, a.frames + 4);
        for t in 1..a.frames - 1 {
            for (p, q) in a.frame(t).iter().zip(b.frame(t)) {
                assert!((p - q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let plan = StftPlan::new(240, 120).unwrap();
        assert!(matches!(plan.forward(&[]), Err(Error::EmptyInput)));
        let mut x = vec![0.0; 500];
        x[17] = f64::NAN;
        assert!(matches!(plan.forward(&x), Err(Error::InvalidSample(17))));
        assert!(StftPlan::new(240, 0).is_err());
        assert!(StftPlan::new(240, 300).is_err());
        assert_eq!(Error::EmptyInput.to_string(), "empty input");
    }
}
