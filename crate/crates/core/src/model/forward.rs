use super::{Model, ModelConfig, StageWeights};
use crate::error::{Error, Result};
use crate::framing::{delay_apply, DelayedPatch, Element, InterleavedSequence, Patch};
use crate::nn::layers::{linear, transformer};
use crate::nn::{Graph, Tensor, Var};
use crate::rvq::Slot;

/// Loss totals and their breakdown for a batch of sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `sum w * nll` over every target.
    pub total: f64,
    pub weight_sum: f64,
    /// Weighted text-head part of `total`, including patch-marker targets.
    pub text_total: f64,
    /// Weighted decoder part of `total`.
    pub audio_total: f64,
    /// Mean unweighted NLL over real text targets.
    pub text_nll: f64,
    /// Mean unweighted NLL per RVQ layer over non-EMPTY target slots.
    pub layer_nll: Vec<f64>,
    /// Weighted loss of predicting each element, per sequence. The first element is never predicted.
    pub element_losses: Vec<Vec<f64>>,
}

impl LossReport {
    /// `total / weight_sum`, or 0 when nothing is weighted.
    pub fn normalized(&self) -> f64 {
        if self.weight_sum > 0.0 {
            self.total / self.weight_sum
        } else {
            0.0
        }
    }
}

pub(crate) fn check_patch(cfg: &ModelConfig, p: &Patch) -> Result<()> {
    if p.layers() != cfg.layers() || p.group() != cfg.group {
        return Err(Error::Shape {
            op: "patch",
            detail: format!("{}x{} patch for a {}x{} model", p.group(), p.layers(), cfg.group, cfg.layers()),
        });
    }
    check_frame(cfg, p.slots())
}

fn check_frame(cfg: &ModelConfig, slots: &[Slot]) -> Result<()> {
    let layers = cfg.layers();
    for (i, s) in slots.iter().enumerate() {
        let size = cfg.codebook_sizes[i % layers];
        if let Some(v) = *s {
            if v as usize >= size {
                return Err(Error::IndexOutOfRange { index: v as usize, layer: i % layers, size });
            }
        }
    }
    Ok(())
}

fn gather_rows(g: &mut Graph, x: Var, rows: &[usize]) -> Result<Var> {
    let d = g.value(x).cols();
    let idx = rows.iter().flat_map(|&r| r * d..(r + 1) * d).collect();
    g.gather(x, idx, vec![rows.len(), d])
}

/// Sum of shared per-layer embeddings for each frame, `[frames, enc_dim]`.
pub(crate) fn frame_embeddings(g: &mut Graph, cfg: &ModelConfig, frames: &[&[Slot]]) -> Result<Var> {
    let mut sum = None;
    for r in 0..cfg.layers() {
        let table = g.param(&format!("audio.emb.{r}"))?;
        let ids: Vec<Option<usize>> = frames.iter().map(|f| f[r].map(usize::from)).collect();
        let e = g.embedding(table, &ids)?;
        sum = Some(match sum {
            None => e,
            Some(s) => g.add(s, e)?,
        });
    }
    Ok(sum.expect("at least one layer"))
}

/// Encodes `patches` into `[N, backbone_dim]`.
pub(crate) fn encode_patches(g: &mut Graph, cfg: &ModelConfig, patches: &[&Patch]) -> Result<Var> {
    let frames: Vec<&[Slot]> = patches.iter().flat_map(|p| p.frames()).collect();
    let x = frame_embeddings(g, cfg, &frames)?;
    let positions: Vec<f64> = patches.iter().flat_map(|_| (0..cfg.group).map(|f| f as f64)).collect();
    let blocks = vec![cfg.group; patches.len()];
    let h = transformer(g, x, "enc", &cfg.encoder.transformer(false), &positions, &blocks)?;
    let h = g.reshape(h, &[patches.len(), cfg.group * cfg.encoder.dim])?;
    linear(g, h, "enc_proj")
}

/// Decoder outputs for `N` conditioning rows `h` and `N` equal-length prefixes of delayed rows.
///
/// Row `j` of each block predicts delayed row `j`; the block input is
/// `[proj(h), emb(prefix[0]), ..., emb(prefix[len - 1])]`.
pub(crate) fn decoder_logits(g: &mut Graph, cfg: &ModelConfig, h: Var, prefixes: &[Vec<&[Slot]>]) -> Result<Vec<Var>> {
    let n = prefixes.len();
    let plen = prefixes.first().map_or(0, Vec::len);
    let len = plen + 1;
    let hp = linear(g, h, "dec_in")?;
    let x = if plen == 0 {
        hp
    } else {
        let frames: Vec<&[Slot]> = prefixes.iter().flatten().copied().collect();
        let e = frame_embeddings(g, cfg, &frames)?;
        let both = g.concat_rows(&[hp, e])?;
        let order: Vec<usize> =
            (0..n).flat_map(|b| std::iter::once(b).chain((0..plen).map(move |j| n + b * plen + j))).collect();
        gather_rows(g, both, &order)?
    };
    let positions: Vec<f64> = (0..n).flat_map(|_| (0..len).map(|j| j as f64)).collect();
    let out = transformer(g, x, "dec", &cfg.decoder.transformer(true), &positions, &vec![len; n])?;
    (0..cfg.layers()).map(|r| linear(g, out, &format!("dec_head.{r}"))).collect()
}

/// Backbone hidden states for a batch, `[sum of lengths, backbone_dim]`.
pub(crate) fn backbone_states(g: &mut Graph, cfg: &ModelConfig, seqs: &[&InterleavedSequence]) -> Result<Var> {
    let mut text_ids = Vec::new();
    let mut text_rows = Vec::new();
    let mut patches = Vec::new();
    let mut patch_rows = Vec::new();
    let mut row = 0;
    for s in seqs {
        if s.is_empty() {
            return Err(Error::EmptyInput);
        }
        if s.len() > cfg.context {
            return Err(Error::ContextExceeded { len: s.len(), limit: cfg.context });
        }
        for e in &s.elements {
            match e {
                Element::Text(t) => {
                    if *t as usize >= cfg.text_vocab() {
                        return Err(Error::Format(format!("text token {t} outside vocabulary of {}", cfg.text_vocab())));
                    }
                    text_ids.push(Some(*t as usize));
                    text_rows.push(row);
                }
                Element::Audio(p) => {
                    check_patch(cfg, p)?;
                    patches.push(p);
                    patch_rows.push(row);
                }
            }
            row += 1;
        }
    }
    let mut parts = Vec::new();
    if !text_ids.is_empty() {
        let table = g.param("text.emb")?;
        parts.push(g.embedding(table, &text_ids)?);
    }
    if !patches.is_empty() {
        parts.push(encode_patches(g, cfg, &patches)?);
    }
    let x = if parts.len() == 1 {
        parts[0]
    } else {
        let both = g.concat_rows(&parts)?;
        let mut order = vec![0; row];
        for (k, &r) in text_rows.iter().chain(&patch_rows).enumerate() {
            order[r] = k;
        }
        gather_rows(g, both, &order)?
    };
    let positions: Vec<f64> = seqs.iter().flat_map(|s| (0..s.len()).map(|i| i as f64)).collect();
    let blocks: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    transformer(g, x, "bb", &cfg.backbone.transformer(true), &positions, &blocks)
}

/// Builds the weighted loss over a batch; returns the `sum w * nll` node and its breakdown.
pub fn batch_loss(g: &mut Graph, cfg: &ModelConfig, seqs: &[&InterleavedSequence], w: &StageWeights) -> Result<(Var, LossReport)> {
    if w.rvq.len() != cfg.layers() {
        return Err(Error::DimensionMismatch { expected: cfg.layers(), got: w.rvq.len() });
    }
    let delays = cfg.delay_config()?;
    let h = backbone_states(g, cfg, seqs)?;
    let rows: usize = seqs.iter().map(|s| s.len()).sum();

    let mut targets = vec![None; rows];
    let mut weights = vec![0.0; rows];
    let mut is_text = vec![false; rows];
    let mut owner = Vec::with_capacity(rows);
    let mut dec_h_rows = Vec::new();
    let mut dec_targets: Vec<DelayedPatch> = Vec::new();
    let mut dec_owner = Vec::new();
    let mut row = 0;
    for (b, s) in seqs.iter().enumerate() {
        for i in 0..s.len() {
            owner.push((b, i + 1));
            match s.elements.get(i + 1) {
                Some(Element::Text(t)) => {
                    targets[row] = Some(*t as usize);
                    weights[row] = w.text;
                    is_text[row] = true;
                }
                Some(Element::Audio(p)) => {
                    targets[row] = Some(cfg.audio_patch() as usize);
                    weights[row] = w.modality;
                    if !w.audio_is_off() {
                        dec_h_rows.push(row);
                        dec_targets.push(delay_apply(p, &delays)?);
                        dec_owner.push((b, i + 1));
                    }
                }
                None => {}
            }
            row += 1;
        }
    }

    let logits = linear(g, h, "text_head")?;
    let text_ce = g.cross_entropy(logits, &targets, &weights)?;
    let mut element_losses: Vec<Vec<f64>> = seqs.iter().map(|s| vec![0.0; s.len()]).collect();
    let nll = g.row_nll(text_ce).expect("cross entropy node").to_vec();
    let mut report = LossReport {
        total: 0.0,
        weight_sum: 0.0,
        text_total: g.value(text_ce).item(),
        audio_total: 0.0,
        text_nll: 0.0,
        layer_nll: vec![0.0; cfg.layers()],
        element_losses: Vec::new(),
    };
    let mut text_count = 0;
    for r in 0..rows {
        if targets[r].is_some() && weights[r] != 0.0 {
            let (b, i) = owner[r];
            element_losses[b][i] += weights[r] * nll[r];
            report.weight_sum += weights[r];
        }
        if is_text[r] {
            report.text_nll += nll[r];
            text_count += 1;
        }
    }
    report.text_nll /= text_count.max(1) as f64;

    let mut total = text_ce;
    if !dec_targets.is_empty() {
        let hsel = gather_rows(g, h, &dec_h_rows)?;
        let len = cfg.delayed_len();
        let prefixes: Vec<Vec<&[Slot]>> = dec_targets.iter().map(|d| (0..len - 1).map(|j| d.row(j)).collect()).collect();
        let layer_logits = decoder_logits(g, cfg, hsel, &prefixes)?;
        for (r, &lg) in layer_logits.iter().enumerate() {
            let mut t = Vec::with_capacity(dec_targets.len() * len);
            let mut wt = Vec::with_capacity(t.capacity());
            for d in &dec_targets {
                for j in 0..len {
                    let s = d.row(j)[r];
                    t.push(s.map(usize::from));
                    wt.push(if s.is_some() { w.rvq[r] } else { 0.0 });
                }
            }
            let ce = g.cross_entropy(lg, &t, &wt)?;
            let nll = g.row_nll(ce).expect("cross entropy node");
            let mut count = 0;
            for (k, tk) in t.iter().enumerate() {
                if tk.is_some() {
                    let (b, i) = dec_owner[k / len];
                    element_losses[b][i] += wt[k] * nll[k];
                    report.weight_sum += wt[k];
                    report.layer_nll[r] += nll[k];
                    count += 1;
                }
            }
            report.layer_nll[r] /= count.max(1) as f64;
            report.audio_total += g.value(ce).item();
            total = g.add(total, ce)?;
        }
    }
    report.total = g.value(total).item();
    report.element_losses = element_losses;
    Ok((total, report))
}

/// Weighted loss of a single sequence.
pub fn sequence_loss(model: &Model, seq: &InterleavedSequence, w: &StageWeights) -> Result<LossReport> {
    let mut g = Graph::new(&model.params);
    Ok(batch_loss(&mut g, &model.config, &[seq], w)?.1)
}

/// Sum of the shared per-layer embeddings of one frame; EMPTY adds nothing.
pub fn embed_frame(model: &Model, frame: &[Slot]) -> Result<Vec<f64>> {
    let cfg = &model.config;
    if frame.len() != cfg.layers() {
        return Err(Error::DimensionMismatch { expected: cfg.layers(), got: frame.len() });
    }
    check_frame(cfg, frame)?;
    let mut out = vec![0.0; cfg.encoder.dim];
    for (r, s) in frame.iter().enumerate() {
        if let Some(v) = s {
            let table = model.params.get(&format!("audio.emb.{r}")).expect("model tables");
            for (o, x) in out.iter_mut().zip(table.row(*v as usize)) {
                *o += x;
            }
        }
    }
    Ok(out)
}

/// One patch through the encoder, a backbone-width vector.
pub fn encode_patch(model: &Model, patch: &Patch) -> Result<Vec<f64>> {
    check_patch(&model.config, patch)?;
    let mut g = Graph::new(&model.params);
    let v = encode_patches(&mut g, &model.config, &[patch])?;
    Ok(g.value(v).data().to_vec())
}

/// Backbone hidden states, one row per element.
pub fn backbone_forward(model: &Model, seq: &InterleavedSequence) -> Result<Tensor> {
    let mut g = Graph::new(&model.params);
    let h = backbone_states(&mut g, &model.config, &[seq])?;
    Ok(g.value(h).clone())
}

/// Per-layer weighted NLL of `target` given backbone state `h`.
pub fn decode_patch_nll(model: &Model, h: &[f64], target: &Patch, weights: &[f64]) -> Result<Vec<f64>> {
    let cfg = &model.config;
    check_patch(cfg, target)?;
    if weights.len() != cfg.layers() {
        return Err(Error::DimensionMismatch { expected: cfg.layers(), got: weights.len() });
    }
    if h.len() != cfg.backbone.dim {
        return Err(Error::DimensionMismatch { expected: cfg.backbone.dim, got: h.len() });
    }
    let delayed = delay_apply(target, &cfg.delay_config()?)?;
    let len = cfg.delayed_len();
    let mut g = Graph::new(&model.params);
    let hv = g.constant(Tensor::new(vec![1, h.len()], h.to_vec())?);
    let prefix: Vec<&[Slot]> = (0..len - 1).map(|j| delayed.row(j)).collect();
    let logits = decoder_logits(&mut g, cfg, hv, &[prefix])?;
    logits
        .iter()
        .enumerate()
        .map(|(r, &lg)| {
            let t: Vec<Option<usize>> = (0..len).map(|j| delayed.row(j)[r].map(usize::from)).collect();
            let wt: Vec<f64> = t.iter().map(|s| if s.is_some() { weights[r] } else { 0.0 }).collect();
            let ce = g.cross_entropy(lg, &t, &wt)?;
            Ok(g.value(ce).item())
        })
        .collect()
}
