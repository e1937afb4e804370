use rand::Rng;

use super::graph::{graph_mpd_fold, graph_stft_magnitude};
use crate::dsp::MelScaleConfig;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamTree, Tensor, Var};
use crate::util::normal;

/// What a toy discriminator looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscInput {
    /// The raw waveform as one channel.
    Wave,
    /// The waveform folded into rows of this many samples, one channel per column.
    Period(usize),
    /// STFT magnitudes at a loss scale's window and hop, one channel per bin.
    Stft(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscConfig {
    pub input: DiscInput,
    pub channels: usize,
    /// Hidden layers, each contributing one feature map.
    pub layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub slope: f64,
}

impl DiscConfig {
    pub fn new(input: DiscInput) -> Self {
        Self { input, channels: 8, layers: 3, kernel: 3, stride: 2, slope: 0.1 }
    }

    fn in_channels(&self) -> Result<usize> {
        Ok(match self.input {
            DiscInput::Wave => 1,
            DiscInput::Period(p) => p,
            DiscInput::Stft(s) => MelScaleConfig::new(s)?.params().window / 2 + 1,
        })
    }
}

/// Forward result: per-location scores `[T, 1]` and one activation per hidden layer.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub scores: Var,
    pub features: Vec<Var>,
    spectral: Vec<Var>,
}

/// A stack of strided 1-D convolutions over time with leaky ReLU and spectral
/// normalization, ending in a one-channel score map.
#[derive(Debug, Clone)]
pub struct ToyDiscriminator {
    pub name: String,
    pub cfg: DiscConfig,
    u: Vec<Vec<f64>>,
}

impl ToyDiscriminator {
    /// Registers parameters under `name`; `zero` gives all-zero weights and biases.
    pub fn init<R: Rng>(params: &mut ParamTree, name: &str, cfg: DiscConfig, zero: bool, rng: &mut R) -> Result<Self> {
        if cfg.kernel == 0 || cfg.stride == 0 || cfg.channels == 0 {
            return Err(Error::Config("discriminator kernel, stride and channels must be positive".into()));
        }
        let mut u = Vec::new();
        let mut c_in = cfg.in_channels()?;
        for l in 0..=cfg.layers {
            let (k, c_out) = if l == cfg.layers { (1, 1) } else { (cfg.kernel, cfg.channels) };
            let fan_in = k * c_in;
            let std = if zero { 0.0 } else { 1.0 / (fan_in as f64).sqrt() };
            params.insert(format!("{name}.l{l}.w"), Tensor::randn(&[fan_in, c_out], std, rng))?;
            params.insert(format!("{name}.l{l}.b"), Tensor::zeros(&[c_out]))?;
            let mut v: Vec<f64> = (0..fan_in).map(|_| normal(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            u.push(v);
            c_in = c_out;
        }
        Ok(Self { name: name.to_owned(), cfg, u })
    }

    /// Turns a waveform node into the `[T, C]` input this discriminator reads.
    pub fn prepare(&self, g: &mut Graph, wave: Var) -> Result<Var> {
        match self.cfg.input {
            DiscInput::Wave => {
                let n = g.value(wave).numel();
                g.reshape(wave, &[n, 1])
            }
            DiscInput::Period(p) => graph_mpd_fold(g, wave, p),
            DiscInput::Stft(s) => {
                let p = MelScaleConfig::new(s)?.params();
                graph_stft_magnitude(g, wave, p.window, p.hop)
            }
        }
    }

    fn conv(g: &mut Graph, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (t, c) = (g.value(x).rows(), g.value(x).cols());
        let (x, t) = if t < kernel {
            let z = g.constant(Tensor::zeros(&[kernel - t, c]));
            (g.concat_rows(&[x, z])?, kernel)
        } else {
            (x, t)
        };
        let out = (t - kernel) / stride + 1;
        let idx = (0..out).flat_map(|o| (0..kernel * c).map(move |j| o * stride * c + j)).collect();
        g.gather(x, idx, vec![out, kernel * c])
    }

    /// Runs the stack on a prepared `[T, C]` input. Power-iteration vectors are read, not updated.
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<DiscOutput> {
        let mut h = input;
        let mut features = Vec::new();
        let mut spectral = Vec::new();
        for l in 0..=self.cfg.layers {
            let last = l == self.cfg.layers;
            let x = if last { h } else { Self::conv(g, h, self.cfg.kernel, self.cfg.stride)? };
            let w = g.param(&format!("{}.l{l}.w", self.name))?;
            let sn = g.spectral_norm(w, &self.u[l])?;
            spectral.push(sn);
            let y = g.matmul(x, sn)?;
            let b = g.param(&format!("{}.l{l}.b", self.name))?;
            let y = g.add_row(y, b)?;
            if last {
                return Ok(DiscOutput { scores: y, features, spectral });
            }
            h = g.leaky_relu(y, self.cfg.slope);
            features.push(h);
        }
        unreachable!("loop returns at the last layer")
    }

    /// Stores the power-iteration vectors computed during `out`'s forward pass.
    pub fn refresh(&mut self, g: &Graph, out: &DiscOutput) {
        for (l, &v) in out.spectral.iter().enumerate() {
            if let Some(u) = g.spectral_u(v) {
                if u.iter().any(|x| *x != 0.0) {
                    self.u[l] = u.to_vec();
                }
            }
        }
    }
}
