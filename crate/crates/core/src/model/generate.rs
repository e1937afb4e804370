use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{backbone_states, decoder_logits};
use super::Model;
use crate::error::{Error, Result};
use crate::framing::{delay_remove, DelayedPatch, Element, InterleavedSequence, Patch};
use crate::nn::layers::linear;
use crate::nn::{Graph, Tensor};
use crate::rvq::Slot;
use crate::util::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub temperature: f64,
    /// Sample among the `top_k` most likely tokens; 1 is greedy.
    pub top_k: usize,
    /// Upper bound on newly generated elements.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self { temperature: 1.0, top_k: 1, max_elements: 64, seed: 0 }
    }
}

impl GenerationSettings {
    pub fn greedy(max_elements: usize) -> Self {
        Self { max_elements, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Prompt followed by the generated elements.
    pub sequence: InterleavedSequence,
    /// Index of the first generated element.
    pub prompt_len: usize,
    /// Every generated patch in delayed form, as sampled.
    pub delayed_patches: Vec<DelayedPatch>,
    /// Whether the backbone window had to drop leading elements.
    pub truncated: bool,
}

fn sample<R: Rng>(logits: &[f64], s: &GenerationSettings, rng: &mut R) -> usize {
    let argmax = |l: &[f64]| l.iter().enumerate().fold(0, |best, (i, &v)| if v > l[best] { i } else { best });
    if s.top_k == 1 {
        return argmax(logits);
    }
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(s.top_k);
    let max = logits[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| ((logits[i] - max) / s.temperature).exp()).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return order[k];
        }
        u -= w;
    }
    order[0]
}

fn last_row(t: &Tensor) -> &[f64] {
    t.row(t.rows() - 1)
}

/// Decodes one patch from backbone state `h`, slot by slot in delayed order.
fn decode_patch<R: Rng>(model: &Model, h: &[f64], s: &GenerationSettings, rng: &mut R) -> Result<(Patch, DelayedPatch)> {
    let cfg = &model.config;
    let delays = cfg.delay_config()?;
    let mut rows: Vec<Vec<Slot>> = Vec::with_capacity(cfg.delayed_len());
    for j in 0..cfg.delayed_len() {
        let mut g = Graph::new(&model.params);
        let hv = g.constant(Tensor::new(vec![1, h.len()], h.to_vec())?);
        let prefix: Vec<&[Slot]> = rows.iter().map(Vec::as_slice).collect();
        let logits = decoder_logits(&mut g, cfg, hv, &[prefix])?;
        let row = (0..cfg.layers())
            .map(|r| {
                delays
                    .source_frame(j, r, cfg.group)
                    .map(|_| sample(last_row(g.value(logits[r])), s, rng) as u16)
            })
            .collect();
        rows.push(row);
    }
    let delayed = DelayedPatch::from_slots(cfg.layers(), rows.concat())?;
    debug_assert!(delayed.satisfies(&delays, cfg.group));
    let patch = delay_remove(&delayed, &delays, cfg.group)?;
    Ok((patch, delayed))
}

/// Continues `prompt` element by element until EOS or `max_elements`.
///
/// When the sequence outgrows the context only the most recent elements are
/// fed to the backbone, and a warning is logged once.
pub fn generate(model: &Model, prompt: &InterleavedSequence, s: &GenerationSettings) -> Result<Generated> {
    s.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cfg = &model.config;
    let mut rng = seeded(s.seed);
    let mut seq = prompt.clone();
    let mut out = Generated { sequence: InterleavedSequence::default(), prompt_len: prompt.len(), delayed_patches: Vec::new(), truncated: false };
    for _ in 0..s.max_elements {
        let start = seq.len().saturating_sub(cfg.context);
        if start > 0 && !out.truncated {
            log::warn!("sequence of {} elements exceeds context {}; keeping the latest {}", seq.len(), cfg.context, cfg.context);
            out.truncated = true;
        }
        let window = InterleavedSequence::new(seq.elements[start..].to_vec());
        let mut g = Graph::new(&model.params);
        let hs = backbone_states(&mut g, cfg, &[&window])?;
        let last = g.slice_rows(hs, window.len() - 1, 1)?;
        let logits = linear(&mut g, last, "text_head")?;
        let tok = sample(g.value(logits).data(), s, &mut rng) as u32;
        if tok == cfg.audio_patch() {
            let h = g.value(last).data().to_vec();
            let (patch, delayed) = decode_patch(model, &h, s, &mut rng)?;
            out.delayed_patches.push(delayed);
            seq.elements.push(Element::Audio(patch));
        } else {
            seq.elements.push(Element::Text(tok));
            if tok == cfg.eos() {
                break;
            }
        }
    }
    out.sequence = seq;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_and_cold_sampling_agree() {
        let l = [0.1, 2.0, -1.0, 1.9];
        let mut rng = seeded(0);
        let greedy = GenerationSettings::greedy(1);
        assert_eq!(sample(&l, &greedy, &mut rng), 1);
        let cold = GenerationSettings { temperature: 1e-9, top_k: 4, ..greedy };
        for _ in 0..50 {
            assert_eq!(sample(&l, &cold, &mut rng), 1);
        }
        let warm = GenerationSettings { temperature: 5.0, top_k: 2, ..greedy };
        let picks: Vec<usize> = (0..200).map(|_| sample(&l, &warm, &mut rng)).collect();
        assert!(picks.iter().all(|&p| p == 1 || p == 3) && picks.contains(&3));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(GenerationSettings { temperature: 0.0, ..Default::default() }.validate().is_err());
        assert!(GenerationSettings { top_k: 0, ..Default::default() }.validate().is_err());
    }
}
