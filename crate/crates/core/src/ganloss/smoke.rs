use serde::{Deserialize, Serialize};

use super::disc::{DiscConfig, DiscInput, DiscOutput, ToyDiscriminator};
use super::graph::{graph_feature_matching, graph_hinge_d, graph_hinge_g, graph_multiscale_mel_loss};
use super::{GeneratorWeights, MPD_PERIODS};
use crate::dsp::LOSS_SCALES;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Graph, ParamTree, Tensor, Var};
use crate::util::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanSmokeConfig {
    pub steps: usize,
    pub samples: usize,
    pub sample_rate: u32,
    pub lr_d: f64,
    pub lr_g: f64,
    pub seed: u64,
}

impl Default for GanSmokeConfig {
    fn default() -> Self {
        Self { steps: 200, samples: 1920, sample_rate: 24_000, lr_d: 1e-3, lr_g: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanStepLog {
    pub step: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub fm: f64,
    pub recon: f64,
    pub g_total: f64,
}

impl GanStepLog {
    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_adv, self.fm, self.recon, self.g_total].iter().all(|v| v.is_finite())
    }
}

fn run_all(g: &mut Graph, discs: &[ToyDiscriminator], wave: Var) -> Result<Vec<DiscOutput>> {
    discs
        .iter()
        .map(|d| {
            let x = d.prepare(g, wave)?;
            d.forward(g, x)
        })
        .collect()
}

/// Alternating hinge-GAN updates of a directly parameterized waveform against
/// period and STFT toy discriminators. Returns one log entry per step.
pub fn gan_smoke_run(cfg: &GanSmokeConfig) -> Result<Vec<GanStepLog>> {
    let mut rng = seeded(cfg.seed);
    let sr = cfg.sample_rate as f64;
    let real: Vec<f64> = (0..cfg.samples)
        .map(|n| {
            let t = n as f64 / sr;
            0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.15 * (2.0 * std::f64::consts::PI * 660.0 * t).sin()
        })
        .collect();
    let mut params = ParamTree::new();
    params.insert("gen.wave", Tensor::randn(&[1, cfg.samples], 0.05, &mut rng))?;
    let inputs = MPD_PERIODS.iter().map(|&p| DiscInput::Period(p)).chain(LOSS_SCALES.iter().map(|&s| DiscInput::Stft(s)));
    let mut discs = Vec::new();
    for (k, input) in inputs.enumerate() {
        discs.push(ToyDiscriminator::init(&mut params, &format!("disc.{k}"), DiscConfig::new(input), false, &mut rng)?);
    }
    let mut opt_d = Adam::new(&params, AdamConfig::default(), &[("disc.", cfg.lr_d), ("gen.", 0.0)])?;
    let mut opt_g = Adam::new(&params, AdamConfig::default(), &[("gen.", cfg.lr_g), ("disc.", 0.0)])?;
    let w = GeneratorWeights::default();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (d_loss, grads) = {
            let mut g = Graph::new(&params);
            let real_v = g.constant(Tensor::new(vec![1, cfg.samples], real.clone())?);
            let fake_v = g.param("gen.wave")?;
            let ro = run_all(&mut g, &discs, real_v)?;
            let fo = run_all(&mut g, &discs, fake_v)?;
            let rs: Vec<Var> = ro.iter().map(|o| o.scores).collect();
            let fs: Vec<Var> = fo.iter().map(|o| o.scores).collect();
            let loss = graph_hinge_d(&mut g, &rs, &fs)?;
            let grads = g.backward(loss)?;
            for (d, o) in discs.iter_mut().zip(&ro) {
                d.refresh(&g, o);
            }
            (g.value(loss).item(), grads)
        };
        opt_d.step(&mut params, &grads, 1.0);

        let (entry, grads) = {
            let mut g = Graph::new(&params);
            let real_v = g.constant(Tensor::new(vec![1, cfg.samples], real.clone())?);
            let fake_v = g.param("gen.wave")?;
            let ro = run_all(&mut g, &discs, real_v)?;
            let fo = run_all(&mut g, &discs, fake_v)?;
            let fs: Vec<Var> = fo.iter().map(|o| o.scores).collect();
            let adv = graph_hinge_g(&mut g, &fs)?;
            let rf: Vec<Vec<Var>> = ro.iter().map(|o| o.features.clone()).collect();
            let ff: Vec<Vec<Var>> = fo.iter().map(|o| o.features.clone()).collect();
            let fm = graph_feature_matching(&mut g, &rf, &ff)?;
            let recon = graph_multiscale_mel_loss(&mut g, fake_v, real_v, cfg.sample_rate)?;
            let a = g.scale(recon, w.recon);
            let b = g.scale(adv, w.adv);
            let c = g.scale(fm, w.fm);
            let ab = g.add(a, b)?;
            let total = g.add(ab, c)?;
            let grads = g.backward(total)?;
            let entry = GanStepLog {
                step: step + 1,
                d_loss,
                g_adv: g.value(adv).item(),
                fm: g.value(fm).item(),
                recon: g.value(recon).item(),
                g_total: g.value(total).item(),
            };
            (entry, grads)
        };
        if !entry.is_finite() {
            return Err(Error::NonFiniteLoss { step: step + 1, value: entry.g_total });
        }
        opt_g.step(&mut params, &grads, 1.0);
        log.push(entry);
    }
    Ok(log)
}
