use crate::dsp::{mel_filterbank, MelScaleConfig, StftPlan, LOG_FLOOR, LOSS_SCALES};
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

const MAG_EPS: f64 = 1e-12;

fn sum_all(g: &mut Graph, terms: Vec<Var>) -> Result<Var> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or(Error::EmptyInput)?;
    it.try_fold(first, |acc, v| g.add(acc, v))
}

/// Differentiable hinge discriminator loss over K score nodes each.
pub fn graph_hinge_d(g: &mut Graph, real: &[Var], fake: &[Var]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::LengthMismatch(real.len(), fake.len()));
    }
    let mut terms = Vec::new();
    for (&r, &f) in real.iter().zip(fake) {
        let neg = g.scale(r, -1.0);
        let a = g.add_scalar(neg, 1.0);
        let a = g.relu(a);
        terms.push(g.mean(a));
        let b = g.add_scalar(f, 1.0);
        let b = g.relu(b);
        terms.push(g.mean(b));
    }
    let s = sum_all(g, terms)?;
    Ok(g.scale(s, 1.0 / real.len() as f64))
}

pub fn graph_hinge_g(g: &mut Graph, fake: &[Var]) -> Result<Var> {
    let terms: Vec<Var> = fake.iter().map(|&f| g.mean(f)).collect();
    let k = terms.len();
    let s = sum_all(g, terms)?;
    Ok(g.scale(s, -1.0 / k as f64))
}

pub fn graph_feature_matching(g: &mut Graph, real: &[Vec<Var>], fake: &[Vec<Var>]) -> Result<Var> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::LengthMismatch(real.len(), fake.len()));
    }
    let mut per_k = Vec::new();
    for (k, (rk, fk)) in real.iter().zip(fake).enumerate() {
        if rk.len() != fk.len() || rk.is_empty() {
            return Err(Error::Shape { op: "feature_matching", detail: format!("layer count {} vs {} at k={k}", rk.len(), fk.len()) });
        }
        let mut terms = Vec::new();
        for (&a, &b) in rk.iter().zip(fk) {
            let d = g.sub(a, b)?;
            let d = g.abs(d);
            terms.push(g.mean(d));
        }
        let s = sum_all(g, terms)?;
        per_k.push(g.scale(s, 1.0 / rk.len() as f64));
    }
    let s = sum_all(g, per_k)?;
    Ok(g.scale(s, 1.0 / real.len() as f64))
}

/// Zero-pads a `[len]` or `[1, len]` waveform node and reshapes to `[rows, period]`.
pub fn graph_mpd_fold(g: &mut Graph, wave: Var, period: usize) -> Result<Var> {
    if period == 0 {
        return Err(Error::Config("period must be at least 1".into()));
    }
    let len = g.value(wave).numel();
    let rows = len.div_ceil(period);
    let flat = g.reshape(wave, &[1, len])?;
    let padded = if rows * period > len {
        let z = g.constant(Tensor::zeros(&[1, rows * period - len]));
        let t = g.transpose(flat)?;
        let zt = g.transpose(z)?;
        let both = g.concat_rows(&[t, zt])?;
        g.reshape(both, &[1, rows * period])?
    } else {
        flat
    };
    g.reshape(padded, &[rows, period])
}

/// STFT magnitudes `[frames, bins]` of a waveform node, matching [`StftPlan::forward`].
pub fn graph_stft_magnitude(g: &mut Graph, wave: Var, window: usize, hop: usize) -> Result<Var> {
    let plan = StftPlan::new(window, hop)?;
    let len = g.value(wave).numel();
    if len <= plan.pad() {
        return Err(Error::InputTooShort { len, need: plan.pad() + 1 });
    }
    let idx = plan.frame_indices(len);
    let frames = idx.len() / window;
    let x = g.gather(wave, idx, vec![frames, window])?;
    let w = plan.normalized_window();
    let bins = plan.bins();
    let mut c = vec![0.0; window * bins];
    let mut s = vec![0.0; window * bins];
    for n in 0..window {
        for k in 0..bins {
            let ang = 2.0 * std::f64::consts::PI * (n * k % window) as f64 / window as f64;
            c[n * bins + k] = w[n] * ang.cos();
            s[n * bins + k] = -w[n] * ang.sin();
        }
    }
    let c = g.constant(Tensor::new(vec![window, bins], c)?);
    let s = g.constant(Tensor::new(vec![window, bins], s)?);
    let re = g.matmul(x, c)?;
    let im = g.matmul(x, s)?;
    let re2 = g.mul(re, re)?;
    let im2 = g.mul(im, im)?;
    let p = g.add(re2, im2)?;
    Ok(g.sqrt_eps(p, MAG_EPS))
}

fn graph_log_mel(g: &mut Graph, wave: Var, scale: u32, sample_rate: u32) -> Result<Var> {
    let p = MelScaleConfig::new(scale)?.params();
    let mag = graph_stft_magnitude(g, wave, p.window, p.hop)?;
    let bins = p.window / 2 + 1;
    let fb = mel_filterbank(p.n_mels, p.window, sample_rate);
    let fb = g.constant(Tensor::new(vec![p.n_mels, bins], fb)?);
    let fbt = g.transpose(fb)?;
    let mel = g.matmul(mag, fbt)?;
    Ok(g.log_clamp(mel, LOG_FLOOR))
}

/// Differentiable multi-scale log-mel L1 loss.
pub fn graph_multiscale_mel_loss(g: &mut Graph, x: Var, y: Var, sample_rate: u32) -> Result<Var> {
    if g.value(x).numel() != g.value(y).numel() {
        return Err(Error::LengthMismatch(g.value(x).numel(), g.value(y).numel()));
    }
    let mut terms = Vec::new();
    for &s in &LOSS_SCALES {
        let a = graph_log_mel(g, x, s, sample_rate)?;
        let b = graph_log_mel(g, y, s, sample_rate)?;
        let d = g.sub(a, b)?;
        let d = g.abs(d);
        terms.push(g.mean(d));
    }
    sum_all(g, terms)
}
