use proptest::collection::vec;
use proptest::prelude::*;

use mimt_core::dsp::{mel_spectrogram, multiscale_mel_loss, MelScaleConfig, Waveform, LOG_FLOOR, SAMPLE_RATE};
use mimt_core::framing::{
    delay_apply, loss_weight_mask, patchify, unpatchify, DelayConfig, Element, ElementWeights, InterleavedSequence,
    Patch, TokenFile,
};
use mimt_core::ganloss::{
    feature_matching_loss, generator_total, hinge_d_loss, hinge_g_loss, mpd_fold, mpd_unfold, stage1_total,
    FeatureSet, ScoreSet,
};
use mimt_core::model::GenerationSettings;
use mimt_core::nn::{ParamTree, Tensor};
use mimt_core::rvq::{commitment_loss, AudioTokenMatrix, Codebook, EmaConfig, RvqState};
use rand::SeedableRng;

fn signal(max: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-1.0f64..1.0, 1000..max)
}

/// Codebook sizes and a token matrix that respects them.
fn tokens() -> impl Strategy<Value = AudioTokenMatrix> {
    (vec(2usize..300, 1..=8), 0usize..30).prop_flat_map(|(sizes, frames)| {
        let per_frame: Vec<_> = sizes.iter().map(|&k| 0..k as u16).collect();
        vec(per_frame, frames).prop_map(move |rows| AudioTokenMatrix::new(sizes.clone(), rows.concat()).unwrap())
    })
}

fn state(dim: usize, sizes: &[usize], values: &[f64]) -> RvqState {
    let mut it = values.iter().cycle().copied();
    let books = sizes.iter().map(|&k| Codebook::from_entries(dim, (0..k * dim).map(|_| it.next().unwrap()).collect()).unwrap()).collect();
    RvqState::new(books).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mel_floor_and_frame_count(x in signal(6000), scale in 5u32..=7) {
        let w = Waveform::new(x.clone(), SAMPLE_RATE);
        let m = mel_spectrogram(&w, scale).unwrap();
        let p = MelScaleConfig::new(scale).unwrap().params();
        prop_assert_eq!(m.frames, 1 + x.len() / p.hop);
        prop_assert_eq!(m.n_mels, p.n_mels);
        let floor = LOG_FLOOR.ln();
        prop_assert!(m.data.iter().all(|&v| v.is_finite() && v >= floor));
    }

    #[test]
    fn mel_loss_is_a_symmetric_nonnegative_distance(x in signal(3000), y in signal(3000)) {
        let n = x.len().min(y.len());
        let a = Waveform::new(x[..n].to_vec(), SAMPLE_RATE);
        let b = Waveform::new(y[..n].to_vec(), SAMPLE_RATE);
        let ab = multiscale_mel_loss(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, multiscale_mel_loss(&b, &a).unwrap());
        prop_assert_eq!(multiscale_mel_loss(&a, &a).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn mel_scale_geometry(i in 3u32..=12) {
        let p = MelScaleConfig::new(i).unwrap().params();
        prop_assert_eq!(p.window, 2 * p.hop);
        prop_assert!(p.n_mels <= p.window.next_power_of_two() / 2 + 1);
    }

    #[test]
    fn quantize_decomposes_the_input(
        dim in 1usize..6,
        sizes in vec(2usize..12, 1..=5),
        values in vec(-2.0f64..2.0, 16..64),
        x in vec(-3.0f64..3.0, 1..40),
    ) {
        let s = state(dim, &sizes, &values);
        let frames = x.len() / dim;
        prop_assume!(frames > 0);
        let x = &x[..frames * dim];
        let q = s.quantize(x).unwrap();
        prop_assert_eq!(q.tokens.frames(), frames);
        for row in q.tokens.rows() {
            for (r, &i) in row.iter().enumerate() {
                prop_assert!((i as usize) < sizes[r]);
            }
        }
        prop_assert_eq!(&q.layer_inputs[0], &x.to_vec());
        let deq = s.dequantize(&q.tokens).unwrap();
        for ((a, b), (c, d)) in deq.iter().zip(&q.quantized).zip(x.iter().zip(&q.residual)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((b + d - c).abs() < 1e-9);
        }
    }

    #[test]
    fn commitment_loss_is_nonnegative_and_zero_on_equality(x in vec(-5.0f64..5.0, 1..50), shift in -1.0f64..1.0) {
        let q: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let (l, g) = commitment_loss(&x, &q).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - shift * shift).abs() < 1e-9);
        prop_assert_eq!(g.len(), x.len());
        prop_assert_eq!(commitment_loss(&x, &x).unwrap().0, 0.0);
    }

    #[test]
    fn ema_keeps_counts_nonnegative_and_entries_finite(
        values in vec(-2.0f64..2.0, 8..32),
        batch in vec(-3.0f64..3.0, 2..60),
        seed in any::<u64>(),
    ) {
        let dim = 2;
        let mut cb = Codebook::from_entries(dim, values[..4 * dim].to_vec()).unwrap();
        let n = batch.len() / dim;
        let vectors = &batch[..n * dim];
        let assignments: Vec<usize> = vectors.chunks(dim).map(|v| cb.nearest(v)).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            cb.ema_update(vectors, &assignments, &EmaConfig::default(), &mut rng).unwrap();
        }
        prop_assert!(cb.ema_counts().iter().all(|&c| c >= 0.0));
        prop_assert!(cb.entries().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn patchify_round_trip(m in tokens(), group in 1usize..=6) {
        let patches = patchify(&m, group).unwrap();
        prop_assert_eq!(patches.len(), m.frames().div_ceil(group));
        for p in &patches {
            prop_assert_eq!(p.group(), group);
            prop_assert_eq!(p.layers(), m.layers());
        }
        let back = unpatchify(&patches, m.codebook_sizes()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn delayed_slots_are_empty_exactly_outside_the_source_range(
        group in 1usize..=8,
        delays in vec(0usize..=7, 1..=8),
        seed in any::<u64>(),
    ) {
        let layers = delays.len();
        let slots: Vec<Option<u16>> = (0..group * layers).map(|i| Some((seed.wrapping_add(i as u64) % 1000) as u16)).collect();
        let p = Patch::new(layers, slots).unwrap();
        let cfg = DelayConfig::new(delays.clone()).unwrap();
        let d = delay_apply(&p, &cfg).unwrap();
        for (i, row) in d.rows().enumerate() {
            for (r, s) in row.iter().enumerate() {
                let inside = i >= delays[r] && i - delays[r] < group;
                prop_assert_eq!(s.is_some(), inside);
            }
        }
        prop_assert!(d.satisfies(&cfg, group));
    }

    #[test]
    fn loss_weights_are_nonnegative_and_zero_on_empty(
        text_w in 0.0f64..200.0,
        rvq_w in vec(0.0f64..20.0, 3),
        frames in 1usize..5,
        text in vec(0u32..100, 0..6),
    ) {
        let m = AudioTokenMatrix::new(vec![10, 10, 10], (0..frames * 3).map(|i| (i % 10) as u16).collect()).unwrap();
        let patches = patchify(&m, 4).unwrap();
        let mut elements: Vec<Element> = text.iter().map(|&t| Element::Text(t)).collect();
        elements.extend(patches.iter().cloned().map(Element::Audio));
        let seq = InterleavedSequence::new(elements);
        let mask = loss_weight_mask(&seq, text_w, &rvq_w).unwrap();
        prop_assert_eq!(mask.len(), seq.len());
        for (w, el) in mask.iter().zip(&seq.elements) {
            match (w, el) {
                (ElementWeights::Text(t), Element::Text(_)) => prop_assert_eq!(*t, text_w),
                (ElementWeights::Audio(ws), Element::Audio(p)) => {
                    for (i, (w, s)) in ws.iter().zip(p.slots()).enumerate() {
                        prop_assert!(*w >= 0.0);
                        prop_assert_eq!(*w, if s.is_some() { rvq_w[i % 3] } else { 0.0 });
                    }
                }
                _ => prop_assert!(false, "weight kind does not match element kind"),
            }
        }
    }

    #[test]
    fn token_file_round_trip(m in tokens(), group in 1u8..=8) {
        let tf = TokenFile::from_matrix(&m, group as usize).unwrap();
        let bytes = tf.to_bytes().unwrap();
        let back = TokenFile::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back.to_matrix().unwrap(), m);
    }

    #[test]
    fn param_tree_keeps_order_and_rejects_duplicates(names in proptest::collection::btree_set("[a-z]{1,6}", 1..8), seed in any::<u64>()) {
        let names: Vec<String> = names.into_iter().collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamTree::new();
        for n in names.iter().rev() {
            p.insert(n.clone(), Tensor::randn(&[2, 3], 1.0, &mut rng)).unwrap();
        }
        prop_assert!(p.insert(names[0].clone(), Tensor::zeros(&[1])).is_err());
        let mut bytes = Vec::new();
        p.write_to(&mut bytes).unwrap();
        let back = ParamTree::read_from(bytes.as_slice()).unwrap();
        let order: Vec<&str> = back.iter().map(|(n, _)| n).collect();
        let want: Vec<&str> = names.iter().rev().map(String::as_str).collect();
        prop_assert_eq!(order, want);
    }

    #[test]
    fn hinge_losses(real in vec(vec(-3.0f64..3.0, 1..5), 1..4), shift in -2.0f64..2.0) {
        let fake: Vec<Vec<f64>> = real.iter().map(|s| s.iter().map(|v| v - shift).collect()).collect();
        let (r, f) = (ScoreSet::new(real.clone()).unwrap(), ScoreSet::new(fake.clone()).unwrap());
        prop_assert!(hinge_d_loss(&r, &f).unwrap() >= 0.0);
        let g = hinge_g_loss(&f).unwrap();
        let want: f64 = fake.iter().map(|s| -s.iter().sum::<f64>() / s.len() as f64).sum::<f64>() / fake.len() as f64;
        prop_assert!((g - want).abs() < 1e-9);
    }

    #[test]
    fn feature_matching_is_zero_only_on_equal_features(feats in vec(vec(vec(-1.0f64..1.0, 1..6), 1..3), 1..3), d in 0.01f64..1.0) {
        let real = FeatureSet { features: feats.clone() };
        prop_assert_eq!(feature_matching_loss(&real, &real).unwrap(), 0.0);
        let moved: Vec<Vec<Vec<f64>>> = feats.iter().map(|k| k.iter().map(|l| l.iter().map(|v| v + d).collect()).collect()).collect();
        let fm = feature_matching_loss(&real, &FeatureSet { features: moved }).unwrap();
        prop_assert!((fm - d).abs() < 1e-9);
    }

    #[test]
    fn composite_losses_are_linear(a in vec(-5.0f64..5.0, 3), b in vec(-5.0f64..5.0, 3)) {
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let g = |v: &[f64]| generator_total(v[0], v[1], v[2]);
        let t = |v: &[f64]| stage1_total(v[0], v[1], v[2]);
        prop_assert!((g(&s) - g(&a) - g(&b)).abs() < 1e-9);
        prop_assert!((t(&s) - t(&a) - t(&b)).abs() < 1e-9);
    }

    #[test]
    fn mpd_fold_shape_and_inverse(x in vec(-1.0f64..1.0, 1..200), period in 1usize..12) {
        let f = mpd_fold(&x, period).unwrap();
        prop_assert_eq!(f.rows, x.len().div_ceil(period));
        prop_assert_eq!(f.data.len(), f.rows * period);
        let back = mpd_unfold(&f);
        prop_assert_eq!(&back[..x.len()], &x[..]);
        prop_assert!(back[x.len()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_settings_validation(t in -1.0f64..2.0, k in 0usize..4) {
        let s = GenerationSettings { temperature: t, top_k: k, ..GenerationSettings::default() };
        prop_assert_eq!(s.validate().is_ok(), t > 0.0 && k >= 1);
    }
}
