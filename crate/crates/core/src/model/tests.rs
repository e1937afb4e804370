use super::*;
use crate::framing::{Element, InterleavedSequence, Patch};
use crate::nn::{gradient_check, Graph, Tensor};

fn tiny(seed: u64) -> Model {
    Model::new(ModelConfig::tiny(), seed).unwrap()
}

fn patch(cfg: &ModelConfig, seed: u64) -> Patch {
    let frames: Vec<Vec<u16>> = (0..cfg.group)
        .map(|f| cfg.codebook_sizes.iter().enumerate().map(|(r, &k)| ((seed as usize * 7 + f * 3 + r) % k) as u16).collect())
        .collect();
    Patch::from_frames(&frames).unwrap()
}

fn mixed(cfg: &ModelConfig) -> InterleavedSequence {
    InterleavedSequence::new(vec![
        Element::Text(1),
        Element::Text(cfg.audio_begin()),
        Element::Audio(patch(cfg, 1)),
        Element::Audio(patch(cfg, 2)),
        Element::Text(cfg.audio_end()),
        Element::Text(4),
        Element::Audio(patch(cfg, 3)),
        Element::Text(cfg.eos()),
    ])
}

fn set(model: &mut Model, name: &str, f: impl Fn(usize) -> f64) {
    let t = model.params.get_mut(name).unwrap();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

#[test]
fn embed_frame_sums_layers() {
    let mut cfg = ModelConfig::tiny();
    cfg.codebook_sizes = vec![3, 3];
    cfg.delays = vec![0, 1];
    cfg.encoder.dim = 2;
    cfg.decoder.dim = 2;
    cfg.encoder.heads = 1;
    cfg.decoder.heads = 1;
    let mut m = Model::new(cfg, 0).unwrap();
    assert_eq!(embed_frame(&m, &[None, None]).unwrap(), vec![0.0, 0.0]);
    set(&mut m, "audio.emb.0", |i| if i == 2 { 1.0 } else { 0.0 });
    set(&mut m, "audio.emb.1", |i| if i == 5 { 2.0 } else { 0.0 });
    assert_eq!(embed_frame(&m, &[Some(1), Some(2)]).unwrap(), vec![1.0, 2.0]);
    set(&mut m, "audio.emb.0", |i| if i == 2 { 3.0 } else { 0.0 });
    set(&mut m, "audio.emb.1", |i| if i == 5 { 6.0 } else { 0.0 });
    assert_eq!(embed_frame(&m, &[Some(1), Some(2)]).unwrap(), vec![3.0, 6.0]);
    assert!(matches!(embed_frame(&m, &[Some(3), None]), Err(crate::Error::IndexOutOfRange { .. })));
}

#[test]
fn encode_patch_contracts() {
    let mut m = tiny(1);
    let cfg = m.config.clone();
    let p = Patch::from_frames(&[vec![1, 2, 3], vec![4, 0, 1]]).unwrap();
    let swapped = Patch::from_frames(&[vec![4, 0, 1], vec![1, 2, 3]]).unwrap();
    let a = encode_patch(&m, &p).unwrap();
    assert_eq!(a.len(), cfg.backbone.dim);
    assert_ne!(a, encode_patch(&m, &swapped).unwrap());
    let empty = Patch::new(cfg.layers(), vec![None; cfg.group * cfg.layers()]).unwrap();
    assert_eq!(encode_patch(&m, &empty).unwrap(), vec![0.0; cfg.backbone.dim]);
    set(&mut m, "enc_proj.b", |i| i as f64 * 0.5);
    let bias: Vec<f64> = (0..cfg.backbone.dim).map(|i| i as f64 * 0.5).collect();
    assert_eq!(encode_patch(&m, &empty).unwrap(), bias);
}

#[test]
fn backbone_positions_and_causality() {
    let m = tiny(2);
    let cfg = &m.config;
    let two = InterleavedSequence::new(vec![Element::Text(3), Element::Audio(patch(cfg, 0))]);
    assert_eq!(backbone_forward(&m, &two).unwrap().rows(), 2);
    let seq = mixed(cfg);
    let full = backbone_forward(&m, &seq).unwrap();
    let mut edited = seq.clone();
    edited.elements[6] = Element::Text(9);
    edited.elements[7] = Element::Audio(patch(cfg, 5));
    let other = backbone_forward(&m, &edited).unwrap();
    assert_eq!(&full.data()[..6 * cfg.backbone.dim], &other.data()[..6 * cfg.backbone.dim]);
    assert_ne!(full.row(6), other.row(6));
    let long = InterleavedSequence::new(vec![Element::Text(1); cfg.context + 1]);
    assert!(matches!(backbone_forward(&m, &long), Err(crate::Error::ContextExceeded { .. })));
}

#[test]
fn pure_text_matches_plain_decoder_lm() {
    let m = tiny(3);
    let seq = InterleavedSequence::new([1u32, 5, 2, 7].map(Element::Text).to_vec());
    let h = backbone_forward(&m, &seq).unwrap();
    let mut g = Graph::new(&m.params);
    let table = g.param("text.emb").unwrap();
    let x = g.embedding(table, &[Some(1), Some(5), Some(2), Some(7)]).unwrap();
    let y = crate::nn::layers::transformer(&mut g, x, "bb", &m.config.backbone.transformer(true), &[0.0, 1.0, 2.0, 3.0], &[4]).unwrap();
    assert_eq!(g.value(y), &h);
}

#[test]
fn uniform_decoder_gives_log_vocab() {
    let mut cfg = ModelConfig::tiny();
    cfg.codebook_sizes = vec![128, 128];
    cfg.delays = vec![0, 1];
    let mut m = Model::new(cfg.clone(), 4).unwrap();
    for r in 0..2 {
        set(&mut m, &format!("dec_head.{r}.w"), |_| 0.0);
    }
    let p = patch(&cfg, 0);
    let h = vec![0.3; cfg.backbone.dim];
    let nll = decode_patch_nll(&m, &h, &p, &[1.0, 1.0]).unwrap();
    for v in nll {
        assert!((v - cfg.group as f64 * 128f64.ln()).abs() < 1e-9);
    }
    assert_eq!(decode_patch_nll(&m, &h, &p, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn decoder_nll_matches_slotwise_recomputation() {
    let mut cfg = ModelConfig::tiny();
    cfg.codebook_sizes = vec![6, 4];
    cfg.delays = vec![0, 1];
    let m = Model::new(cfg.clone(), 5).unwrap();
    let p = Patch::from_frames(&[vec![5, 1], vec![2, 3]]).unwrap();
    let h: Vec<f64> = (0..cfg.backbone.dim).map(|i| (i as f64 * 0.37).sin()).collect();
    let w = [2.0, 0.5];
    let got = decode_patch_nll(&m, &h, &p, &w).unwrap();
    // Delayed rows for D = [0, 1]: (5, -), (2, 1), (-, 3).
    let delayed = [[Some(5u16), None], [Some(2), Some(1)], [None, Some(3)]];
    let mut want = [0.0; 2];
    for j in 0..3 {
        let mut g = Graph::new(&m.params);
        let hv = g.constant(Tensor::new(vec![1, h.len()], h.clone()).unwrap());
        let prefix: Vec<&[Option<u16>]> = delayed[..j].iter().map(|r| &r[..]).collect();
        let logits = forward::decoder_logits(&mut g, &cfg, hv, &[prefix]).unwrap();
        for r in 0..2 {
            let Some(t) = delayed[j][r] else { continue };
            let l = g.value(logits[r]);
            let row = l.row(j);
            let lse = row.iter().map(|x| x.exp()).sum::<f64>().ln();
            want[r] += w[r] * (lse - row[t as usize]);
        }
    }
    for r in 0..2 {
        assert!((got[r] - want[r]).abs() < 1e-10, "{got:?} vs {want:?}");
    }
}

#[test]
fn understanding_stage_ignores_audio() {
    let m = tiny(6);
    let cfg = &m.config;
    let patches = InterleavedSequence::new((0..4).map(|i| Element::Audio(patch(cfg, i))).collect());
    let u = StageWeights::preset(Stage::Understanding, cfg.layers());
    let r = sequence_loss(&m, &patches, &u).unwrap();
    assert_eq!((r.total, r.audio_total), (0.0, 0.0));
    let r = sequence_loss(&m, &mixed(cfg), &u).unwrap();
    assert_eq!(r.audio_total, 0.0);
    assert!(r.total > 0.0);
}

#[test]
fn joint_text_weight_is_one_hundred() {
    let m = tiny(7);
    let seq = InterleavedSequence::new([1u32, 5, 2].map(Element::Text).to_vec());
    let j = sequence_loss(&m, &seq, &StageWeights::preset(Stage::Joint, 3)).unwrap();
    let u = sequence_loss(&m, &seq, &StageWeights::preset(Stage::Understanding, 3)).unwrap();
    assert!((j.total - 100.0 * u.total).abs() < 1e-9 * j.total);
}

#[test]
fn loss_factorizes_over_elements() {
    let m = tiny(8);
    let seq = mixed(&m.config);
    let w = StageWeights::preset(Stage::Joint, 3);
    let full = sequence_loss(&m, &seq, &w).unwrap();
    let parts = &full.element_losses[0];
    assert!((parts.iter().sum::<f64>() - full.total).abs() < 1e-8);
    for i in 1..seq.len() {
        let prefix = InterleavedSequence::new(seq.elements[..=i].to_vec());
        let r = sequence_loss(&m, &prefix, &w).unwrap();
        assert!((r.element_losses[0][i] - parts[i]).abs() < 1e-8, "element {i}");
        let mut edited = seq.clone();
        for e in edited.elements.iter_mut().skip(i + 1) {
            *e = Element::Text(0);
        }
        let r = sequence_loss(&m, &edited, &w).unwrap();
        assert!((r.element_losses[0][i] - parts[i]).abs() < 1e-12, "causality at {i}");
    }
}

#[test]
fn shared_tables_feed_encoder_and_decoder() {
    let mut m = tiny(9);
    let cfg = m.config.clone();
    let p = patch(&cfg, 4);
    let h = vec![0.1; cfg.backbone.dim];
    let w = vec![1.0; cfg.layers()];
    let (e0, d0) = (encode_patch(&m, &p).unwrap(), decode_patch_nll(&m, &h, &p, &w).unwrap());
    let first = p.frame(0)[1].unwrap() as usize;
    let d = cfg.encoder.dim;
    set(&mut m, "audio.emb.1", |i| if i / d == first { 0.7 } else { 0.0 });
    assert_ne!(encode_patch(&m, &p).unwrap(), e0);
    assert_ne!(decode_patch_nll(&m, &h, &p, &w).unwrap(), d0);
}

#[test]
fn full_model_gradient_check() {
    let m = tiny(10);
    assert!(m.num_params() <= 50_000);
    let seqs = [mixed(&m.config), InterleavedSequence::new(vec![Element::Audio(patch(&m.config, 7)), Element::Text(2)])];
    let refs: Vec<&InterleavedSequence> = seqs.iter().collect();
    let w = StageWeights { text: 3.0, rvq: vec![2.0, 1.0, 0.5], modality: 1.5 };
    let report = gradient_check(&m.params, |g| Ok(forward::batch_loss(g, &m.config, &refs, &w)?.0), 1e-5, 200, 3).unwrap();
    assert!(report.max_rel_error < 1e-4, "{:?}", report.per_tensor);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let m = tiny(11);
    let seq = mixed(&m.config);
    let cfg = TrainConfig { lr_backbone: 0.0, lr_audio: 0.0, ..TrainConfig::default() };
    let mut t = Trainer::new(m.clone(), cfg, StageWeights::preset(Stage::Joint, 3)).unwrap();
    let metrics = t.train_step(&[&seq]).unwrap();
    assert!(metrics.loss > 0.0);
    assert_eq!(t.model, m);
}

#[test]
fn generation_respects_delays_and_seed() {
    let m = tiny(12);
    let prompt = InterleavedSequence::new(vec![Element::Text(1), Element::Text(m.config.audio_begin())]);
    let s = GenerationSettings { temperature: 1.5, top_k: 4, max_elements: 12, seed: 3 };
    let a = generate(&m, &prompt, &s).unwrap();
    assert_eq!(a, generate(&m, &prompt, &s).unwrap());
    let delays = m.config.delay_config().unwrap();
    for d in &a.delayed_patches {
        assert!(d.satisfies(&delays, m.config.group));
    }
    assert!(a.sequence.len() > prompt.len());
}
