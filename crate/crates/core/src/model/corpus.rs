use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::framing::{interleave_schedule, Element, InterleavedSequence, Patch};
use crate::util::seeded;

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// A synthetic read-aloud corpus: random strings interleaved with a fixed
/// per-character "pronunciation" patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub sequences: usize,
    pub text_len: usize,
    pub text_run: usize,
    pub audio_run: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { sequences: 32, text_len: 10, text_run: 5, audio_run: 5, seed: 0 }
    }
}

fn alphabet(cfg: &ModelConfig) -> Vec<u32> {
    if cfg.text_base_vocab >= 128 {
        LETTERS.iter().map(|&b| u32::from(b)).collect()
    } else {
        (0..cfg.text_base_vocab as u32).collect()
    }
}

/// One random patch per alphabet symbol, in alphabet order.
pub fn pronunciation_table(cfg: &ModelConfig, seed: u64) -> Result<Vec<Patch>> {
    let mut rng = seeded(seed ^ 0x5eed);
    alphabet(cfg)
        .iter()
        .map(|_| {
            let frames: Vec<Vec<u16>> = (0..cfg.group)
                .map(|_| cfg.codebook_sizes.iter().map(|&k| rng.random_range(0..k) as u16).collect())
                .collect();
            Patch::from_frames(&frames)
        })
        .collect()
}

/// Sequences of the form `text-run BEGIN patch-run END text-run ... EOS`.
///
/// Sequence `i` starts with alphabet symbol `i` (cycling), so while the
/// corpus is no larger than the alphabet the first element identifies it.
pub fn synthetic_corpus(cfg: &ModelConfig, c: &CorpusConfig) -> Result<Vec<InterleavedSequence>> {
    if c.text_len == 0 || c.text_run == 0 || c.audio_run == 0 {
        return Err(Error::Config("corpus lengths and runs must be positive".into()));
    }
    let letters = alphabet(cfg);
    let table = pronunciation_table(cfg, c.seed)?;
    let mut rng = seeded(c.seed);
    (0..c.sequences)
        .map(|i| {
            let mut picks = vec![i % letters.len()];
            picks.extend((1..c.text_len).map(|_| rng.random_range(0..letters.len())));
            let text: Vec<u32> = picks.iter().map(|&k| letters[k]).collect();
            let patches = picks.iter().map(|&k| table[k].clone()).collect();
            let plain = interleave_schedule(&text, patches, (c.text_run, c.audio_run))?;
            let mut elements = Vec::with_capacity(plain.len() + 8);
            let mut prev_audio = false;
            for e in plain.elements {
                let audio = !e.is_text();
                if audio && !prev_audio {
                    elements.push(Element::Text(cfg.audio_begin()));
                } else if !audio && prev_audio {
                    elements.push(Element::Text(cfg.audio_end()));
                }
                prev_audio = audio;
                elements.push(e);
            }
            if prev_audio {
                elements.push(Element::Text(cfg.audio_end()));
            }
            elements.push(Element::Text(cfg.eos()));
            Ok(InterleavedSequence::new(elements))
        })
        .collect()
}
