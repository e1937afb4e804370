//! The toy hierarchical audio-text language model.
//!
//! Patches of `G` token frames are summarized by a bidirectional patch
//! encoder into one backbone position each. A causal backbone runs over
//! interleaved text tokens and patches, and a small causal patch decoder
//! expands a backbone state into the next patch, slot by slot in delayed
//! order. Encoder and decoder share the per-codebook embedding tables.

mod config;
mod corpus;
mod forward;
mod generate;
mod train;

#[cfg(test)]
mod tests;

pub use config::{ComponentConfig, ModelConfig, Stage, StageWeights, TrainingFile};
pub use corpus::{pronunciation_table, synthetic_corpus, CorpusConfig};
pub use forward::{backbone_forward, batch_loss, decode_patch_nll, embed_frame, encode_patch, sequence_loss, LossReport};
pub use generate::{generate, Generated, GenerationSettings};
pub use train::{StepMetrics, TrainConfig, Trainer};

use crate::error::Result;
use crate::nn::layers::{init_linear, init_transformer};
use crate::nn::{ParamTree, Tensor};
use crate::util::seeded;

/// Control tokens for the default byte-level text vocabulary.
pub const AUDIO_BEGIN: u32 = 256;
pub const AUDIO_END: u32 = 257;
pub const AUDIO_PATCH: u32 = 258;
pub const EOS: u32 = 259;

const EMB_STD: f64 = 0.5;

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamTree,
}

impl Model {
    /// Random initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = seeded(seed);
        let mut p = ParamTree::new();
        for (r, &k) in c.codebook_sizes.iter().enumerate() {
            p.insert(format!("audio.emb.{r}"), Tensor::randn(&[k, c.encoder.dim], EMB_STD, &mut rng))?;
        }
        init_transformer(&mut p, "enc", &c.encoder.transformer(false), &mut rng)?;
        init_linear(&mut p, "enc_proj", c.group * c.encoder.dim, c.backbone.dim, true, 1.0, &mut rng)?;
        p.insert("text.emb", Tensor::randn(&[c.text_vocab(), c.backbone.dim], EMB_STD, &mut rng))?;
        init_transformer(&mut p, "bb", &c.backbone.transformer(true), &mut rng)?;
        init_linear(&mut p, "text_head", c.backbone.dim, c.text_vocab(), false, 1.0, &mut rng)?;
        init_linear(&mut p, "dec_in", c.backbone.dim, c.decoder.dim, true, 1.0, &mut rng)?;
        init_transformer(&mut p, "dec", &c.decoder.transformer(true), &mut rng)?;
        for (r, &k) in c.codebook_sizes.iter().enumerate() {
            init_linear(&mut p, &format!("dec_head.{r}"), c.decoder.dim, k, false, 1.0, &mut rng)?;
        }
        Ok(Self { config, params: p })
    }

    /// Rebuilds a model from saved parameters, checking every expected tensor is present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamTree) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(crate::Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(crate::Error::Format(format!("checkpoint lacks parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_params()
    }
}
