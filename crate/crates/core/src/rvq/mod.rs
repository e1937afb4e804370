//! Residual vector quantization.
//!
//! Each layer picks the codebook entry nearest (squared Euclidean) to the
//! residual left by the previous layers; the reconstruction is the sum of
//! the picked entries. Codebooks are learned with exponential moving
//! averages of assignment counts and sums, reseeding entries that fall out
//! of use.

mod checkpoint;
pub mod kmeans;
mod tokens;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub use tokens::{AudioTokenMatrix, Slot};

/// Codebook sizes of the tokenizer's first eight layers.
pub const LM_CODEBOOK_SIZES: [usize; 8] = [1024, 1024, 128, 128, 128, 128, 128, 128];

/// Codebook sizes of the full 20-layer tokenizer quantizer.
pub fn tokenizer_codebook_sizes() -> Vec<usize> {
    let mut sizes = vec![1024, 1024];
    sizes.extend(std::iter::repeat_n(128, 18));
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaConfig {
    pub decay: f64,
    pub eps: f64,
    /// Entries whose smoothed count drops below this are reseeded.
    pub dead_threshold: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { decay: 0.99, eps: 1e-5, dead_threshold: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    entries: Vec<f64>,
    norms: Vec<f64>,
    ema_counts: Vec<f64>,
    ema_sums: Vec<f64>,
}

impl Codebook {
    /// `entries` is `K * dim` values, row-major.
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() % dim != 0 || entries.len() / dim < 2 {
            return Err(Error::Config(format!(
                "codebook needs at least 2 entries of dim {dim}, got {} values",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("codebook entries must be finite".into()));
        }
        let k = entries.len() / dim;
        let mut cb = Self {
            dim,
            ema_sums: entries.clone(),
            entries,
            norms: vec![0.0; k],
            ema_counts: vec![1.0; k],
        };
        cb.refresh_norms();
        Ok(cb)
    }

    /// k-means++ seeding from `data` (rows of `dim`).
    pub fn kmeans_pp<R: Rng>(dim: usize, size: usize, data: &[f64], rng: &mut R) -> Result<Self> {
        let entries = kmeans::kmeans_pp_seed(data, dim, size, rng)?;
        Self::from_entries(dim, entries)
    }

    pub fn size(&self) -> usize {
        self.norms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, k: usize) -> &[f64] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn ema_counts(&self) -> &[f64] {
        &self.ema_counts
    }

    fn refresh_norms(&mut self) {
        for (k, n) in self.norms.iter_mut().enumerate() {
            *n = self.entries[k * self.dim..(k + 1) * self.dim].iter().map(|v| v * v).sum();
        }
    }

    /// Index of the nearest entry; the lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> usize {
        // |x - c|^2 = |x|^2 - 2<x,c> + |c|^2, and |x|^2 is shared by all k.
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.entries.chunks_exact(self.dim).enumerate() {
            let dot: f64 = x.iter().zip(c).map(|(a, b)| a * b).sum();
            let d = self.norms[k] - 2.0 * dot;
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// One EMA step over `vectors` (rows of `dim`) assigned to `assignments`.
    /// Returns the indices of reseeded entries.
    pub fn ema_update<R: Rng>(
        &mut self,
        vectors: &[f64],
        assignments: &[usize],
        cfg: &EmaConfig,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let dim = self.dim;
        if vectors.len() != assignments.len() * dim {
            return Err(Error::Shape {
                op: "ema_update",
                detail: format!("{} values for {} assignments of dim {dim}", vectors.len(), assignments.len()),
            });
        }
        if assignments.is_empty() {
            return Ok(Vec::new());
        }
        let k = self.size();
        let mut counts = vec![0.0; k];
        let mut sums = vec![0.0; k * dim];
        for (v, &a) in vectors.chunks_exact(dim).zip(assignments) {
            if a >= k {
                return Err(Error::IndexOutOfRange { index: a, layer: 0, size: k });
            }
            counts[a] += 1.0;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(v) {
                *s += x;
            }
        }
        let d = cfg.decay;
        for (c, n) in self.ema_counts.iter_mut().zip(&counts) {
            *c = d * *c + (1.0 - d) * n;
        }
        for (s, n) in self.ema_sums.iter_mut().zip(&sums) {
            *s = d * *s + (1.0 - d) * n;
        }
        let batch = assignments.len();
        let mut reseeded = Vec::new();
        for j in 0..k {
            let row = j * dim..(j + 1) * dim;
            if self.ema_counts[j] < cfg.dead_threshold {
                let pick = rng.random_range(0..batch);
                let src = &vectors[pick * dim..(pick + 1) * dim];
                self.entries[row.clone()].copy_from_slice(src);
                self.ema_sums[row].copy_from_slice(src);
                self.ema_counts[j] = 1.0;
                reseeded.push(j);
            } else {
                let c = self.ema_counts[j].max(cfg.eps);
                for (e, s) in self.entries[row.clone()].iter_mut().zip(&self.ema_sums[row]) {
                    *e = s / c;
                }
            }
        }
        self.refresh_norms();
        Ok(reseeded)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqState {
    dim: usize,
    layers: Vec<Codebook>,
}

/// Output of [`RvqState::quantize`]. Vectors are flat, `frames * dim`.
#[derive(Debug, Clone)]
pub struct Quantized {
    pub tokens: AudioTokenMatrix,
    /// Running sum of the selected entries.
    pub quantized: Vec<f64>,
    /// What is left after the last layer.
    pub residual: Vec<f64>,
    /// The residual each layer saw as input.
    pub layer_inputs: Vec<Vec<f64>>,
}

impl RvqState {
    pub fn new(layers: Vec<Codebook>) -> Result<Self> {
        let dim = layers.first().map(Codebook::dim).ok_or_else(|| Error::Config("RVQ needs at least one layer".into()))?;
        if let Some(bad) = layers.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
        }
        Ok(Self { dim, layers })
    }

    /// Gaussian-initialized codebooks, mostly for tests and demos.
    pub fn random<R: Rng>(dim: usize, sizes: &[usize], scale: f64, rng: &mut R) -> Result<Self> {
        let layers = sizes
            .iter()
            .enumerate()
            .map(|(r, &k)| {
                let s = scale / (r as f64 + 1.0);
                let entries = (0..k * dim).map(|_| s * crate::util::normal(rng)).collect();
                Codebook::from_entries(dim, entries)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layers(&self) -> &[Codebook] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Codebook] {
        &mut self.layers
    }

    pub fn codebook_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(Codebook::size).collect()
    }

    /// Keeps the first `n` layers.
    pub fn truncated(&self, n: usize) -> Self {
        Self { dim: self.dim, layers: self.layers[..n.clamp(1, self.layers.len())].to_vec() }
    }

    pub fn quantize(&self, x: &[f64]) -> Result<Quantized> {
        let dim = self.dim;
        if x.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: x.len() % dim });
        }
        let frames = x.len() / dim;
        let layers = self.layers.len();
        let mut residual = x.to_vec();
        let mut quantized = vec![0.0; x.len()];
        let mut indices = vec![0u16; frames * layers];
        let mut layer_inputs = Vec::with_capacity(layers);
        for (r, cb) in self.layers.iter().enumerate() {
            layer_inputs.push(residual.clone());
            for f in 0..frames {
                let row = f * dim..(f + 1) * dim;
                let k = cb.nearest(&residual[row.clone()]);
                indices[f * layers + r] = k as u16;
                let e = cb.entry(k);
                for ((res, q), c) in residual[row.clone()].iter_mut().zip(&mut quantized[row]).zip(e) {
                    *res -= c;
                    *q += c;
                }
            }
        }
        let tokens = AudioTokenMatrix::new(self.codebook_sizes(), indices)?;
        Ok(Quantized { tokens, quantized, residual, layer_inputs })
    }

    /// Sums the selected entries of every frame. Uses as many layers as the
    /// token matrix has.
    pub fn dequantize(&self, tokens: &AudioTokenMatrix) -> Result<Vec<f64>> {
        if tokens.layers() > self.layers.len() {
            return Err(Error::DimensionMismatch { expected: self.layers.len(), got: tokens.layers() });
        }
        let dim = self.dim;
        let mut out = vec![0.0; tokens.frames() * dim];
        for (f, row) in tokens.rows().enumerate() {
            let acc = &mut out[f * dim..(f + 1) * dim];
            for (r, &idx) in row.iter().enumerate() {
                let cb = &self.layers[r];
                if idx as usize >= cb.size() {
                    return Err(Error::IndexOutOfRange { index: idx as usize, layer: r, size: cb.size() });
                }
                for (a, c) in acc.iter_mut().zip(cb.entry(idx as usize)) {
                    *a += c;
                }
            }
        }
        Ok(out)
    }

    /// EMA step on every layer from one quantized batch.
    pub fn ema_update<R: Rng>(&mut self, batch: &Quantized, cfg: &EmaConfig, rng: &mut R) -> Result<usize> {
        let layers = batch.tokens.layers();
        let mut reseeded = 0;
        for (r, cb) in self.layers.iter_mut().enumerate().take(layers) {
            let assignments: Vec<usize> = batch.tokens.rows().map(|row| row[r] as usize).collect();
            reseeded += cb.ema_update(&batch.layer_inputs[r], &assignments, cfg, rng)?.len();
        }
        Ok(reseeded)
    }
}

/// Mean over elements of `(x - q)^2`, with `q` treated as a constant.
/// Returns the loss and its gradient with respect to `x`.
pub fn commitment_loss(x: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != q.len() {
        return Err(Error::LengthMismatch(x.len(), q.len()));
    }
    if x.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = x.len() as f64;
    let loss = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let grad = x.iter().zip(q).map(|(a, b)| 2.0 * (a - b) / n).collect();
    Ok((loss, grad))
}

/// Mean squared error per element.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone)]
pub struct RvqTrainConfig {
    pub codebook_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub ema: EmaConfig,
}

/// Seeds every layer with k-means++ on the first batch, then runs EMA epochs
/// over shuffled minibatches.
pub fn train<R: Rng>(data: &[f64], dim: usize, cfg: &RvqTrainConfig, rng: &mut R) -> Result<RvqState> {
    if dim == 0 || data.is_empty() || data.len() % dim != 0 {
        return Err(Error::Config(format!("training data must be a nonempty multiple of dim {dim}")));
    }
    let n = data.len() / dim;
    let batch_size = cfg.batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let gather = |idx: &[usize]| -> Vec<f64> { idx.iter().flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied()).collect() };

    let first = gather(&order[..batch_size]);
    let mut residual = first.clone();
    let mut layers = Vec::with_capacity(cfg.codebook_sizes.len());
    for &k in &cfg.codebook_sizes {
        let cb = Codebook::kmeans_pp(dim, k, &residual, rng)?;
        for row in residual.chunks_exact_mut(dim) {
            let e = cb.entry(cb.nearest(row));
            for (r, c) in row.iter_mut().zip(e) {
                *r -= c;
            }
        }
        layers.push(cb);
    }
    let mut state = RvqState::new(layers)?;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = gather(chunk);
            let q = state.quantize(&batch)?;
            state.ema_update(&q, &cfg.ema, rng)?;
        }
    }
    Ok(state)
}
