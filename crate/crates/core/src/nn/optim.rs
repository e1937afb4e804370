use serde::{Deserialize, Serialize};

use super::{Grads, ParamTree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Learning-rate multiplier over training, after linear warmup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Multiplier for `step` (0-based) of `total`, warming up over `warmup_ratio * total` steps.
    pub fn factor(self, step: usize, total: usize, warmup_ratio: f64) -> f64 {
        let warm = ((total as f64 * warmup_ratio).ceil() as usize).max(1);
        if step < warm {
            return (step + 1) as f64 / warm as f64;
        }
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let span = total.saturating_sub(warm).max(1) as f64;
                let progress = ((step - warm) as f64 / span).min(1.0);
                0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Adam with per-group base learning rates selected by parameter-name prefix.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lrs: Vec<f64>,
    group_of: Vec<usize>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    /// Each parameter joins the first group whose prefix its name starts with.
    pub fn new(params: &ParamTree, cfg: AdamConfig, groups: &[(&str, f64)]) -> Result<Self> {
        let mut group_of = Vec::with_capacity(params.len());
        for (name, _) in params.iter() {
            let g = groups
                .iter()
                .position(|(p, _)| name.starts_with(p))
                .ok_or_else(|| Error::Config(format!("parameter {name} matches no learning-rate group")))?;
            group_of.push(g);
        }
        Ok(Self {
            cfg,
            lrs: groups.iter().map(|g| g.1).collect(),
            group_of,
            m: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn group_lrs(&self) -> &[f64] {
        &self.lrs
    }

    /// One update with every group's rate multiplied by `lr_factor`.
    pub fn step(&mut self, params: &mut ParamTree, grads: &Grads, lr_factor: f64) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let Some(g) = grads.param(i) else { continue };
            let lr = self.lrs[self.group_of[i]] * lr_factor;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let (_, p) = params.by_index_mut(i);
            for (j, x) in p.data_mut().iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                if lr != 0.0 {
                    let upd = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps) + c.weight_decay * *x;
                    *x -= lr * upd;
                }
            }
        }
    }
}
