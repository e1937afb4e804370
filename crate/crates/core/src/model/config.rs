use serde::{Deserialize, Serialize};

use super::corpus::CorpusConfig;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::framing::DelayConfig;
use crate::nn::layers::TransformerConfig;
use crate::rvq::LM_CODEBOOK_SIZES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
}

impl ComponentConfig {
    pub fn transformer(&self, causal: bool) -> TransformerConfig {
        TransformerConfig { dim: self.dim, layers: self.layers, heads: self.heads, ffn_dim: self.ffn_dim, causal }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 || (self.dim / self.heads) % 2 != 0 {
            return Err(Error::Config(format!("{what}: dim {} must split into {} heads of even width", self.dim, self.heads)));
        }
        if self.ffn_dim == 0 {
            return Err(Error::Config(format!("{what}: ffn_dim must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Ordinary text tokens; four control tokens follow them.
    pub text_base_vocab: usize,
    pub codebook_sizes: Vec<usize>,
    pub group: usize,
    pub delays: Vec<usize>,
    pub encoder: ComponentConfig,
    pub backbone: ComponentConfig,
    pub decoder: ComponentConfig,
    /// Maximum backbone positions.
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_base_vocab: 256,
            codebook_sizes: LM_CODEBOOK_SIZES.to_vec(),
            group: 4,
            delays: (0..8).collect(),
            encoder: ComponentConfig { dim: 64, layers: 2, heads: 4, ffn_dim: 256 },
            backbone: ComponentConfig { dim: 128, layers: 4, heads: 4, ffn_dim: 512 },
            decoder: ComponentConfig { dim: 64, layers: 2, heads: 4, ffn_dim: 256 },
            context: 256,
        }
    }
}

impl ModelConfig {
    /// A configuration small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        let c = ComponentConfig { dim: 8, layers: 1, heads: 2, ffn_dim: 16 };
        Self {
            text_base_vocab: 12,
            codebook_sizes: vec![7, 5, 5],
            group: 2,
            delays: vec![0, 1, 2],
            encoder: c,
            backbone: ComponentConfig { dim: 12, layers: 2, heads: 2, ffn_dim: 24 },
            decoder: c,
            context: 32,
        }
    }

    pub fn layers(&self) -> usize {
        self.codebook_sizes.len()
    }

    pub fn text_vocab(&self) -> usize {
        self.text_base_vocab + 4
    }

    pub fn audio_begin(&self) -> u32 {
        self.text_base_vocab as u32
    }

    pub fn audio_end(&self) -> u32 {
        self.text_base_vocab as u32 + 1
    }

    /// Target-only token meaning "the next element is a patch".
    pub fn audio_patch(&self) -> u32 {
        self.text_base_vocab as u32 + 2
    }

    pub fn eos(&self) -> u32 {
        self.text_base_vocab as u32 + 3
    }

    pub fn delay_config(&self) -> Result<DelayConfig> {
        DelayConfig::new(self.delays.clone())
    }

    /// Decoder sequence length, `G + max(D)`.
    pub fn delayed_len(&self) -> usize {
        self.group + self.delays.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate("encoder")?;
        self.backbone.validate("backbone")?;
        self.decoder.validate("decoder")?;
        if self.encoder.dim != self.decoder.dim {
            return Err(Error::Config(format!(
                "encoder and decoder share embedding tables, so their dims must match ({} vs {})",
                self.encoder.dim, self.decoder.dim
            )));
        }
        if self.codebook_sizes.is_empty() || self.codebook_sizes.iter().any(|&k| k == 0 || k > u16::MAX as usize) {
            return Err(Error::Config(format!("codebook sizes must be in 1..=65535, got {:?}", self.codebook_sizes)));
        }
        if self.delays.len() != self.codebook_sizes.len() {
            return Err(Error::Config(format!(
                "{} delays for {} codebooks",
                self.delays.len(),
                self.codebook_sizes.len()
            )));
        }
        self.delay_config()?;
        if self.group == 0 || self.context < 2 || self.text_base_vocab == 0 {
            return Err(Error::Config("group, context and text vocabulary must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Text-only loss.
    Understanding,
    /// Text and audio losses.
    #[default]
    Joint,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "understanding" => Ok(Stage::Understanding),
            "joint" => Ok(Stage::Joint),
            _ => Err(Error::Config(format!("unknown stage {s:?}; expected understanding or joint"))),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Understanding => "understanding",
            Stage::Joint => "joint",
        })
    }
}

/// Loss weights for text targets, each RVQ layer, and the patch-marker target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageWeights {
    pub text: f64,
    pub rvq: Vec<f64>,
    /// Weight on predicting that the next element is a patch.
    pub modality: f64,
}

const JOINT_RVQ: [f64; 8] = [12.0, 8.0, 6.0, 4.0, 2.0, 2.0, 1.0, 1.0];

impl StageWeights {
    /// Preset for `stage` over `layers` codebooks. Layers past the eighth get weight 1.
    pub fn preset(stage: Stage, layers: usize) -> Self {
        match stage {
            Stage::Understanding => Self { text: 1.0, rvq: vec![0.0; layers], modality: 0.0 },
            Stage::Joint => Self {
                text: 100.0,
                rvq: (0..layers).map(|r| JOINT_RVQ.get(r).copied().unwrap_or(1.0)).collect(),
                modality: 100.0,
            },
        }
    }

    pub fn audio_is_off(&self) -> bool {
        self.rvq.iter().all(|&w| w == 0.0)
    }
}

/// Everything `train-lm` reads from its TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub corpus: CorpusConfig,
    /// Overrides the stage preset when present.
    pub weights: Option<StageWeights>,
}

impl TrainingFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        f.model.validate()?;
        if let Some(w) = &f.weights {
            if w.rvq.len() != f.model.layers() {
                return Err(Error::Config(format!("{} RVQ weights for {} codebooks", w.rvq.len(), f.model.layers())));
            }
        }
        Ok(f)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn stage_weights(&self) -> StageWeights {
        self.weights.clone().unwrap_or_else(|| StageWeights::preset(self.train.stage, self.model.layers()))
    }
}
