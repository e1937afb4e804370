//! Adversarial and composite losses for codec fine-tuning, with
//! discriminator input transforms and a toy discriminator.
//!
//! Inner expectations and L1 norms are per-element means, so magnitudes do
//! not depend on input resolution.

mod disc;
mod graph;
mod smoke;

pub use disc::{DiscConfig, DiscInput, DiscOutput, ToyDiscriminator};
pub use graph::{graph_feature_matching, graph_hinge_d, graph_hinge_g, graph_mpd_fold, graph_multiscale_mel_loss, graph_stft_magnitude};
pub use smoke::{gan_smoke_run, GanSmokeConfig, GanStepLog};

use crate::error::{Error, Result};

/// Multi-period discriminator periods.
pub const MPD_PERIODS: [usize; 5] = [2, 3, 5, 7, 11];

/// Scores from each of K sub-discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<Vec<f64>>,
}

/// Per sub-discriminator, the flattened activations of each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Vec<Vec<Vec<f64>>>,
}

impl ScoreSet {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput);
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::Format("non-finite discriminator score".into()));
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/K) sum_k [mean max(0, 1 - real_k) + mean max(0, 1 + fake_k)]`.
pub fn hinge_d_loss(real: &ScoreSet, fake: &ScoreSet) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::LengthMismatch(real.len(), fake.len()));
    }
    let total: f64 = real
        .scores
        .iter()
        .zip(&fake.scores)
        .map(|(r, f)| {
            mean(&r.iter().map(|x| (1.0 - x).max(0.0)).collect::<Vec<_>>())
                + mean(&f.iter().map(|x| (1.0 + x).max(0.0)).collect::<Vec<_>>())
        })
        .sum();
    Ok(total / real.len() as f64)
}

/// `-(1/K) sum_k mean fake_k`.
pub fn hinge_g_loss(fake: &ScoreSet) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(-fake.scores.iter().map(|f| mean(f)).sum::<f64>() / fake.len() as f64)
}

/// `(1/K) sum_k (1/L_k) sum_l mean |real - fake|`.
pub fn feature_matching_loss(real: &FeatureSet, fake: &FeatureSet) -> Result<f64> {
    if real.features.len() != fake.features.len() || real.features.is_empty() {
        return Err(Error::LengthMismatch(real.features.len(), fake.features.len()));
    }
    let mut total = 0.0;
    for (k, (rk, fk)) in real.features.iter().zip(&fake.features).enumerate() {
        if rk.len() != fk.len() || rk.is_empty() {
            return Err(Error::Shape { op: "feature_matching_loss", detail: format!("layer count {} vs {} at k={k}", rk.len(), fk.len()) });
        }
        let mut sk = 0.0;
        for (l, (a, b)) in rk.iter().zip(fk).enumerate() {
            if a.len() != b.len() || a.is_empty() {
                return Err(Error::Shape { op: "feature_matching_loss", detail: format!("shape mismatch at (k={k}, l={l}): {} vs {}", a.len(), b.len()) });
            }
            sk += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
        }
        total += sk / rk.len() as f64;
    }
    Ok(total / real.features.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorWeights {
    pub recon: f64,
    pub adv: f64,
    pub fm: f64,
}

impl Default for GeneratorWeights {
    fn default() -> Self {
        Self { recon: 1.0, adv: 1.0, fm: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1Weights {
    pub a2t: f64,
    pub recon: f64,
    pub commit: f64,
}

impl Default for Stage1Weights {
    fn default() -> Self {
        Self { a2t: 10.0, recon: 1.0, commit: 1.0 }
    }
}

pub fn generator_total_with(w: GeneratorWeights, recon: f64, adv: f64, fm: f64) -> f64 {
    w.recon * recon + w.adv * adv + w.fm * fm
}

/// `recon + adv + 2 fm`.
pub fn generator_total(recon: f64, adv: f64, fm: f64) -> f64 {
    generator_total_with(GeneratorWeights::default(), recon, adv, fm)
}

pub fn stage1_total_with(w: Stage1Weights, a2t: f64, recon: f64, commit: f64) -> f64 {
    w.a2t * a2t + w.recon * recon + w.commit * commit
}

/// `10 a2t + recon + commit`.
pub fn stage1_total(a2t: f64, recon: f64, commit: f64) -> f64 {
    stage1_total_with(Stage1Weights::default(), a2t, recon, commit)
}

/// A waveform folded into rows of `period` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Folded {
    pub rows: usize,
    pub period: usize,
    pub data: Vec<f64>,
}

/// Right-pads with zeros to a multiple of `period` and reshapes row-major.
pub fn mpd_fold(samples: &[f64], period: usize) -> Result<Folded> {
    if period == 0 {
        return Err(Error::Config("period must be at least 1".into()));
    }
    let rows = samples.len().div_ceil(period);
    let mut data = samples.to_vec();
    data.resize(rows * period, 0.0);
    Ok(Folded { rows, period, data })
}

/// Inverse of [`mpd_fold`], trailing zeros included.
pub fn mpd_unfold(f: &Folded) -> Vec<f64> {
    f.data.clone()
}
