use rand::Rng;
use rustfft::num_complex::Complex64;

use super::mel::{mel_filterbank, LOG_FLOOR};
use super::stft::{Spectrogram, StftPlan};
use super::{MelSpec, Waveform};
use crate::error::{Error, Result};
use crate::util::seeded;

/// Sparse filterbank rows: first nonzero bin and the weights from there.
struct SparseBank {
    rows: Vec<(usize, Vec<f64>)>,
    bins: usize,
}

impl SparseBank {
    fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let bins = n_fft / 2 + 1;
        let fb = mel_filterbank(n_mels, n_fft, sample_rate);
        let rows = fb
            .chunks_exact(bins)
            .map(|row| {
                let start = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let end = row.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
                (start, row[start..end].to_vec())
            })
            .collect();
        Self { rows, bins }
    }

    fn apply(&self, s: &[f64], out: &mut [f64]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.rows) {
            *o = w.iter().zip(&s[*start..]).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (v, (start, w)) in y.iter().zip(&self.rows) {
            for (o, a) in out[*start..].iter_mut().zip(w) {
                *o += a * v;
            }
        }
    }
}

/// Nonnegative least-squares magnitudes for each log-mel frame, by
/// multiplicative updates. Entries at the log floor count as silence.
fn mel_to_magnitude(m: &MelSpec, iterations: usize) -> (Vec<f64>, usize) {
    let bank = SparseBank::new(m.n_mels, m.window, m.sample_rate);
    let bins = bank.bins;
    let floor = LOG_FLOOR.ln() + 1e-9;
    let mut out = vec![0.0; m.frames * bins];
    let mut numer = vec![0.0; bins];
    let mut denom = vec![0.0; bins];
    let mut proj = vec![0.0; m.n_mels];
    for t in 0..m.frames {
        let target: Vec<f64> = m.frame(t).iter().map(|&v| if v <= floor { 0.0 } else { v.exp() }).collect();
        bank.apply_t(&target, &mut numer);
        let s = &mut out[t * bins..(t + 1) * bins];
        s.fill(1.0);
        for _ in 0..iterations {
            bank.apply(s, &mut proj);
            bank.apply_t(&proj, &mut denom);
            for ((x, n), d) in s.iter_mut().zip(&numer).zip(&denom) {
                *x = if *n > 0.0 { *x * n / (d + 1e-30) } else { 0.0 };
            }
        }
    }
    (out, bins)
}

/// Griffin-Lim phase reconstruction from a log-mel spectrogram, starting
/// from random phases drawn from `seed`.
pub fn griffin_lim_seeded(m: &MelSpec, iterations: usize, seed: u64) -> Result<Waveform> {
    if iterations == 0 {
        return Err(Error::Config("griffin-lim needs at least one iteration".into()));
    }
    if m.frames == 0 {
        return Err(Error::EmptyInput);
    }
    let plan = StftPlan::new(m.window, m.hop)?;
    let (mag, bins) = mel_to_magnitude(m, 200);
    let len = (m.frames - 1) * m.hop;
    let mut rng = seeded(seed);
    let mut phase: Vec<Complex64> = (0..mag.len())
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    let build = |phase: &[Complex64]| Spectrogram {
        frames: m.frames,
        bins,
        data: mag.iter().zip(phase).map(|(a, p)| p * *a).collect(),
    };
    let mut x = plan.inverse(&build(&phase), len);
    for _ in 1..iterations {
        if len <= plan.pad() {
            break;
        }
        let est = plan.forward(&x)?;
        for (p, c) in phase.iter_mut().zip(&est.data) {
            let n = c.norm();
            if n > 1e-12 {
                *p = c / n;
            }
        }
        x = plan.inverse(&build(&phase), len);
    }
    for s in &mut x {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(Waveform::new(x, m.sample_rate))
}

/// [`griffin_lim_seeded`] with seed 0.
pub fn griffin_lim(m: &MelSpec, iterations: usize) -> Result<Waveform> {
    griffin_lim_seeded(m, iterations, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{mel_spectrogram, stft};

    fn peak_bin(w: &Waveform) -> usize {
        let s = stft(w, 960, 480).unwrap();
        let f = s.frame(s.frames / 2);
        (0..s.bins).max_by(|&a, &b| f[a].norm().total_cmp(&f[b].norm())).unwrap()
    }

    #[test]
    fn sine_peak_survives() {
        let w = Waveform::sine(440.0, 0.5, 24_000, 24_000);
        let m = mel_spectrogram(&w, 7).unwrap();
        let out = griffin_lim(&m, 60).unwrap();
        assert_eq!(out.len(), 24_000);
        assert_eq!(peak_bin(&out), peak_bin(&w));
    }

    #[test]
    fn floor_mel_is_silent() {
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 9600], 24_000), 7).unwrap();
        let out = griffin_lim(&m, 5).unwrap();
        assert!(out.peak() < 1e-3);
    }

    #[test]
    fn zero_iterations_rejected() {
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 9600], 24_000), 7).unwrap();
        assert!(griffin_lim(&m, 0).is_err());
    }
}
