use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::forward::{batch_loss, LossReport};
use super::{Model, Stage, StageWeights};
use crate::error::{Error, Result};
use crate::framing::InterleavedSequence;
use crate::nn::{Adam, AdamConfig, Graph, LrSchedule};
use crate::util::{seeded, SeededRng};

/// Parameter-name prefixes trained at the patch encoder/decoder rate.
const AUDIO_PREFIXES: [&str; 3] = ["audio.", "enc", "dec"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Backbone, text embedding and text head.
    pub lr_backbone: f64,
    /// Patch encoder, patch decoder and the shared audio embeddings.
    pub lr_audio: f64,
    /// Defaults to constant for understanding and cosine for joint.
    pub schedule: Option<LrSchedule>,
    pub warmup_ratio: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub seed: u64,
    pub stage: Stage,
    /// Stop once the full-corpus normalized loss falls below this.
    pub target_loss: Option<f64>,
    /// Steps between full-corpus evaluations while a target is set.
    pub eval_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            lr_backbone: 6e-4,
            lr_audio: 4e-3,
            schedule: None,
            warmup_ratio: 0.01,
            clip_norm: 1.0,
            seed: 0,
            stage: Stage::Joint,
            target_loss: None,
            eval_every: 50,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        self.schedule.unwrap_or(match self.stage {
            Stage::Understanding => LrSchedule::Constant,
            Stage::Joint => LrSchedule::Cosine,
        })
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Normalized weighted loss of the batch.
    pub loss: f64,
    pub text_nll: f64,
    pub layer_nll: Vec<f64>,
    pub text_weight: f64,
    pub audio_weights: Vec<f64>,
    pub audio_loss: f64,
    pub grad_norm: f64,
    pub lr_backbone: f64,
    pub lr_audio: f64,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    cfg: TrainConfig,
    weights: StageWeights,
    opt: Adam,
    rng: SeededRng,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, weights: StageWeights) -> Result<Self> {
        if weights.rvq.len() != model.config.layers() {
            return Err(Error::DimensionMismatch { expected: model.config.layers(), got: weights.rvq.len() });
        }
        if cfg.batch_size == 0 || cfg.steps == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        let mut groups: Vec<(&str, f64)> = AUDIO_PREFIXES.iter().map(|p| (*p, cfg.lr_audio)).collect();
        groups.push(("", cfg.lr_backbone));
        let opt = Adam::new(&model.params, cfg.adam, &groups)?;
        Ok(Self { model, rng: seeded(cfg.seed), cfg, weights, opt, step: 0, order: Vec::new(), cursor: 0 })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn weights(&self) -> &StageWeights {
        &self.weights
    }

    /// One optimizer update on `batch`, minimizing `sum w * nll / sum w`.
    pub fn train_step(&mut self, batch: &[&InterleavedSequence]) -> Result<StepMetrics> {
        let (report, mut grads) = {
            let mut g = Graph::new(&self.model.params);
            let (total, report) = batch_loss(&mut g, &self.model.config, batch, &self.weights)?;
            if !report.total.is_finite() {
                return Err(Error::NonFiniteLoss { step: self.step, value: report.total });
            }
            let norm = if report.weight_sum > 0.0 { 1.0 / report.weight_sum } else { 1.0 };
            let loss = g.scale(total, norm);
            (report, g.backward(loss)?)
        };
        let grad_norm = grads.global_norm();
        if !grad_norm.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, value: grad_norm });
        }
        if self.cfg.clip_norm > 0.0 && grad_norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / grad_norm);
        }
        let factor = self.cfg.schedule().factor(self.step, self.cfg.steps, self.cfg.warmup_ratio);
        self.opt.step(&mut self.model.params, &grads, factor);
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss: report.normalized(),
            text_nll: report.text_nll,
            layer_nll: report.layer_nll,
            text_weight: self.weights.text,
            audio_weights: self.weights.rvq.clone(),
            audio_loss: report.audio_total,
            grad_norm,
            lr_backbone: self.cfg.lr_backbone * factor,
            lr_audio: self.cfg.lr_audio * factor,
        })
    }

    /// Indices of the next batch, reshuffling the corpus each epoch.
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let size = self.cfg.batch_size.min(n);
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor >= self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    /// Weighted loss over a whole corpus without updating anything.
    pub fn evaluate(&self, corpus: &[InterleavedSequence]) -> Result<LossReport> {
        let refs: Vec<&InterleavedSequence> = corpus.iter().collect();
        let mut g = Graph::new(&self.model.params);
        Ok(batch_loss(&mut g, &self.model.config, &refs, &self.weights)?.1)
    }

    /// Trains for the configured number of steps, or until the target loss is met.
    /// Returns the last full-corpus evaluation.
    pub fn fit(&mut self, corpus: &[InterleavedSequence], mut on_step: impl FnMut(&StepMetrics)) -> Result<LossReport> {
        if corpus.is_empty() {
            return Err(Error::EmptyInput);
        }
        while self.step < self.cfg.steps {
            let idx = self.next_batch(corpus.len());
            let batch: Vec<&InterleavedSequence> = idx.iter().map(|&i| &corpus[i]).collect();
            let m = self.train_step(&batch)?;
            on_step(&m);
            if let Some(target) = self.cfg.target_loss {
                if self.step % self.cfg.eval_every.max(1) == 0 && self.evaluate(corpus)?.normalized() < target {
                    break;
                }
            }
        }
        self.evaluate(corpus)
    }
}
