//! Audio ↔ token path: 100 Hz log-mel, 4-frame averaging to 25 Hz, a
//! linear projection fitted by PCA, then RVQ. The inverse runs dequantize,
//! back-projection, frame repetition and Griffin-Lim.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{encoder_mel, griffin_lim_seeded, resample_linear, MelSpec, Waveform, ENCODER_MEL, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::{ParamTree, Tensor};
use crate::rvq::{self, AudioTokenMatrix, EmaConfig, RvqState, RvqTrainConfig, LM_CODEBOOK_SIZES};

/// Mel frames averaged into one token frame.
pub const MEL_PER_FRAME: usize = 4;
/// Samples covered by one 25 Hz token frame.
pub const FRAME_SAMPLES: usize = MEL_PER_FRAME * ENCODER_MEL.hop;

/// Token frames produced for `len` samples at 24 kHz.
pub fn frames_for_samples(len: usize) -> usize {
    len / FRAME_SAMPLES
}

/// Averaged log-mel features, `M x 128`, for a 24 kHz waveform.
pub fn frame_features(w: &Waveform) -> Result<Vec<f64>> {
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::Config(format!("expected {SAMPLE_RATE} Hz audio, got {}", w.sample_rate)));
    }
    let m = frames_for_samples(w.len());
    if m == 0 {
        return Err(Error::InputTooShort { len: w.len(), need: FRAME_SAMPLES });
    }
    let mel = encoder_mel(w)?;
    let n = mel.n_mels;
    let mut out = vec![0.0; m * n];
    for f in 0..m {
        let row = &mut out[f * n..(f + 1) * n];
        for t in f * MEL_PER_FRAME..(f + 1) * MEL_PER_FRAME {
            for (o, v) in row.iter_mut().zip(mel.frame(t)) {
                *o += v / MEL_PER_FRAME as f64;
            }
        }
    }
    Ok(out)
}

/// Brings audio to 24 kHz, logging when a conversion happens.
pub fn to_model_rate(w: Waveform) -> Waveform {
    if w.sample_rate == SAMPLE_RATE {
        return w;
    }
    log::warn!("resampling {} Hz input to {SAMPLE_RATE} Hz", w.sample_rate);
    resample_linear(&w, SAMPLE_RATE)
}

/// Orthonormal linear map from mel features to the RVQ space.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    mean: Vec<f64>,
    /// `n_mels x dim`, orthonormal columns.
    basis: Vec<f64>,
    n_mels: usize,
    dim: usize,
}

impl Projection {
    /// Principal components of `data` (rows of `n_mels`), largest variance first.
    pub fn fit(data: &[f64], n_mels: usize, dim: usize) -> Result<Self> {
        if n_mels == 0 || data.is_empty() || data.len() % n_mels != 0 {
            return Err(Error::Config(format!("projection data must be a nonempty multiple of {n_mels}")));
        }
        if dim == 0 || dim > n_mels {
            return Err(Error::Config(format!("projection dim {dim} must be in 1..={n_mels}")));
        }
        let rows = data.len() / n_mels;
        let mut mean = vec![0.0; n_mels];
        for row in data.chunks_exact(n_mels) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / rows as f64;
            }
        }
        let centered = DMatrix::from_fn(rows, n_mels, |r, c| data[r * n_mels + c] - mean[c]);
        let cov = centered.transpose() * &centered / rows.max(2) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..n_mels).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut basis = vec![0.0; n_mels * dim];
        for (j, &k) in order.iter().take(dim).enumerate() {
            let col = eig.eigenvectors.column(k);
            // sign convention: the largest-magnitude component is positive
            let pivot = col.iter().copied().fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
            let s = if pivot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n_mels {
                basis[i * dim + j] = s * col[i];
            }
        }
        Ok(Self { mean, basis, n_mels, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn project(&self, data: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n_mels, self.dim);
        data.chunks_exact(n)
            .flat_map(|row| {
                (0..d).map(move |j| (0..n).map(|i| (row[i] - self.mean[i]) * self.basis[i * d + j]).sum::<f64>())
            })
            .collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let (n, d) = (self.n_mels, self.dim);
        z.chunks_exact(d)
            .flat_map(|row| (0..n).map(move |i| self.mean[i] + (0..d).map(|j| row[j] * self.basis[i * d + j]).sum::<f64>()))
            .collect()
    }

    pub fn to_params(&self) -> Result<ParamTree> {
        let mut p = ParamTree::new();
        p.insert("proj.mean", Tensor::new(vec![self.n_mels], self.mean.clone())?)?;
        p.insert("proj.basis", Tensor::new(vec![self.n_mels, self.dim], self.basis.clone())?)?;
        Ok(p)
    }

    pub fn from_params(p: &ParamTree) -> Result<Self> {
        let get = |name: &str| p.get(name).ok_or_else(|| Error::Format(format!("projection file lacks {name}")));
        let (mean, basis) = (get("proj.mean")?, get("proj.basis")?);
        if basis.shape().len() != 2 || mean.shape() != [basis.shape()[0]] {
            return Err(Error::Format(format!("projection shapes {:?} and {:?} disagree", mean.shape(), basis.shape())));
        }
        Ok(Self { mean: mean.data().to_vec(), basis: basis.data().to_vec(), n_mels: basis.shape()[0], dim: basis.shape()[1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub dim: usize,
    pub codebook_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub ema_decay: f64,
    pub griffin_lim_iters: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            codebook_sizes: LM_CODEBOOK_SIZES.to_vec(),
            epochs: 20,
            batch_size: 256,
            ema_decay: 0.99,
            griffin_lim_iters: 32,
        }
    }
}

/// Path of the projection file stored next to a codebook checkpoint.
pub fn projection_path(codebooks: &Path) -> PathBuf {
    let mut s = codebooks.as_os_str().to_owned();
    s.push(".proj");
    PathBuf::from(s)
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub projection: Projection,
    pub rvq: RvqState,
}

/// Training summary: quantization MSE of the EMA codebooks and of a Lloyd
/// refinement of the first layer seeded from them, in the projected space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RvqReport {
    pub frames: usize,
    pub rvq_mse: f64,
    pub first_layer_mse: f64,
    pub lloyd_first_layer_mse: f64,
}

impl Tokenizer {
    /// Fits the projection and the codebooks on the frames of `waves`.
    pub fn train<R: Rng>(waves: &[Waveform], cfg: &TokenizerConfig, rng: &mut R) -> Result<(Self, RvqReport)> {
        let mut feats = Vec::new();
        for w in waves {
            feats.extend(frame_features(w)?);
        }
        let n_mels = ENCODER_MEL.n_mels;
        let projection = Projection::fit(&feats, n_mels, cfg.dim)?;
        let z = projection.project(&feats);
        let tcfg = RvqTrainConfig {
            codebook_sizes: cfg.codebook_sizes.clone(),
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            ema: EmaConfig { decay: cfg.ema_decay, ..EmaConfig::default() },
        };
        let state = rvq::train(&z, cfg.dim, &tcfg, rng)?;
        let q = state.quantize(&z)?;
        let first = &state.layers()[0];
        let lloyd = rvq::kmeans::lloyd(&z, cfg.dim, first.entries().to_vec(), 50);
        let report = RvqReport {
            frames: z.len() / cfg.dim,
            rvq_mse: rvq::mse(&z, &q.quantized),
            first_layer_mse: rvq::kmeans::quantization_mse(&z, first.entries(), cfg.dim),
            lloyd_first_layer_mse: rvq::kmeans::quantization_mse(&z, &lloyd, cfg.dim),
        };
        Ok((Self { projection, rvq: state }, report))
    }

    pub fn tokenize(&self, w: &Waveform) -> Result<AudioTokenMatrix> {
        let feats = frame_features(w)?;
        if self.projection.n_mels() != ENCODER_MEL.n_mels || self.projection.dim() != self.rvq.dim() {
            return Err(Error::DimensionMismatch { expected: self.rvq.dim(), got: self.projection.dim() });
        }
        Ok(self.rvq.quantize(&self.projection.project(&feats))?.tokens)
    }

    /// Mel estimate at 100 Hz with `4M + 1` frames, the last repeated.
    pub fn tokens_to_mel(&self, tokens: &AudioTokenMatrix) -> Result<MelSpec> {
        if tokens.frames() == 0 {
            return Err(Error::EmptyInput);
        }
        let z = self.rvq.dequantize(tokens)?;
        let feats = self.projection.reconstruct(&z);
        let n = self.projection.n_mels();
        let mut data = Vec::with_capacity((tokens.frames() * MEL_PER_FRAME + 1) * n);
        for row in feats.chunks_exact(n) {
            for _ in 0..MEL_PER_FRAME {
                data.extend_from_slice(row);
            }
        }
        data.extend_from_slice(&feats[feats.len() - n..]);
        Ok(MelSpec {
            frames: data.len() / n,
            n_mels: n,
            data,
            window: ENCODER_MEL.window,
            hop: ENCODER_MEL.hop,
            sample_rate: SAMPLE_RATE,
            scale_index: None,
        })
    }

    /// `960 * M` samples of audio.
    pub fn detokenize(&self, tokens: &AudioTokenMatrix, iterations: usize, seed: u64) -> Result<Waveform> {
        griffin_lim_seeded(&self.tokens_to_mel(tokens)?, iterations, seed)
    }

    /// Writes the codebooks to `path` and the projection to `<path>.proj`.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.rvq.save(path)?;
        self.projection.to_params()?.save(projection_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rvq = RvqState::load(path)?;
        let projection = Projection::from_params(&ParamTree::load(projection_path(path))?)?;
        if projection.dim() != rvq.dim() {
            return Err(Error::DimensionMismatch { expected: rvq.dim(), got: projection.dim() });
        }
        Ok(Self { projection, rvq })
    }
}
