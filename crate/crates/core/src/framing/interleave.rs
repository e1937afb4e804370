use crate::error::{Error, Result};

use super::Patch;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    Text(u32),
    Audio(Patch),
}

impl Element {
    pub fn is_text(&self) -> bool {
        matches!(self, Element::Text(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InterleavedSequence {
    pub elements: Vec<Element>,
}

impl InterleavedSequence {
    pub fn new(elements: Vec<Element>) -> Self {
        Self { elements }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn text_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.elements.iter().filter_map(|e| match e {
            Element::Text(t) => Some(*t),
            Element::Audio(_) => None,
        })
    }

    pub fn patches(&self) -> impl Iterator<Item = &Patch> {
        self.elements.iter().filter_map(|e| match e {
            Element::Audio(p) => Some(p),
            Element::Text(_) => None,
        })
    }

    /// Run-length summary, e.g. `[(true, 5), (false, 5)]` for five text
    /// tokens followed by five patches.
    pub fn runs(&self) -> Vec<(bool, usize)> {
        let mut runs: Vec<(bool, usize)> = Vec::new();
        for e in &self.elements {
            match runs.last_mut() {
                Some((text, n)) if *text == e.is_text() => *n += 1,
                _ => runs.push((e.is_text(), 1)),
            }
        }
        runs
    }
}

/// Alternates runs of `ratio.0` text tokens and `ratio.1` patches, text
/// first. When one stream runs out the rest of the other is appended as is.
pub fn interleave_schedule(text: &[u32], patches: Vec<Patch>, ratio: (usize, usize)) -> Result<InterleavedSequence> {
    let (t, s) = ratio;
    if t == 0 || s == 0 {
        return Err(Error::Config(format!("interleave ratio components must be >= 1, got {t}:{s}")));
    }
    let mut elements = Vec::with_capacity(text.len() + patches.len());
    let mut text = text.iter().copied().peekable();
    let mut patches = patches.into_iter().peekable();
    while text.peek().is_some() && patches.peek().is_some() {
        elements.extend(text.by_ref().take(t).map(Element::Text));
        elements.extend(patches.by_ref().take(s).map(Element::Audio));
    }
    elements.extend(text.map(Element::Text));
    elements.extend(patches.map(Element::Audio));
    Ok(InterleavedSequence { elements })
}

/// Loss weight of one sequence element. Audio weights are per slot,
/// frame-major, zero on EMPTY slots.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementWeights {
    Text(f64),
    Audio(Vec<f64>),
}

impl ElementWeights {
    pub fn total(&self) -> f64 {
        match self {
            ElementWeights::Text(w) => *w,
            ElementWeights::Audio(ws) => ws.iter().sum(),
        }
    }
}

pub fn loss_weight_mask(seq: &InterleavedSequence, text_weight: f64, rvq_weights: &[f64]) -> Result<Vec<ElementWeights>> {
    if text_weight < 0.0 || rvq_weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Config("loss weights must be nonnegative".into()));
    }
    seq.elements
        .iter()
        .map(|e| match e {
            Element::Text(_) => Ok(ElementWeights::Text(text_weight)),
            Element::Audio(p) => {
                if p.layers() != rvq_weights.len() {
                    return Err(Error::DimensionMismatch { expected: rvq_weights.len(), got: p.layers() });
                }
                let ws = p
                    .slots()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if s.is_some() { rvq_weights[i % p.layers()] } else { 0.0 })
                    .collect();
                Ok(ElementWeights::Audio(ws))
            }
        })
        .collect()
}
