use mimt_core::model::{synthetic_corpus, CorpusConfig, Model, ModelConfig, Stage, StageWeights, TrainConfig, Trainer};

fn small() -> ModelConfig {
    ModelConfig { text_base_vocab: 16, codebook_sizes: vec![32, 32, 16, 16], delays: vec![0, 1, 2, 3], ..ModelConfig::tiny() }
}

#[test]
fn loss_decreases_over_first_fifty_steps() {
    let cfg = small();
    let corpus = synthetic_corpus(&cfg, &CorpusConfig { sequences: 8, text_len: 6, text_run: 3, audio_run: 3, seed: 0 }).unwrap();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let model = Model::new(cfg.clone(), seed).unwrap();
        let tc = TrainConfig { steps: 50, batch_size: 4, seed, ..TrainConfig::default() };
        let mut t = Trainer::new(model, tc, StageWeights::preset(Stage::Joint, cfg.layers())).unwrap();
        let before = t.evaluate(&corpus).unwrap().normalized();
        let after = t
            .fit(&corpus, |m| assert!(m.loss.is_finite() && m.grad_norm.is_finite(), "step {}: {m:?}", m.step))
            .unwrap()
            .normalized();
        assert_eq!(t.step(), 50);
        ratios.push(after / before);
    }
    ratios.sort_by(f64::total_cmp);
    assert!(ratios[2] < 1.0, "median after/before loss ratio {:?}", ratios);
}

#[test]
fn understanding_stage_trains_text_only() {
    let cfg = small();
    let corpus = synthetic_corpus(&cfg, &CorpusConfig { sequences: 4, text_len: 4, text_run: 2, audio_run: 2, seed: 1 }).unwrap();
    let model = Model::new(cfg.clone(), 0).unwrap();
    let frozen: Vec<(String, Vec<f64>)> = model
        .params
        .iter()
        .filter(|(n, _)| n.starts_with("dec"))
        .map(|(n, t)| (n.to_owned(), t.data().to_vec()))
        .collect();
    assert!(!frozen.is_empty());
    let tc = TrainConfig { steps: 5, batch_size: 2, stage: Stage::Understanding, ..TrainConfig::default() };
    let mut t = Trainer::new(model, tc, StageWeights::preset(Stage::Understanding, cfg.layers())).unwrap();
    let report = t.fit(&corpus, |_| {}).unwrap();
    assert_eq!(report.audio_total, 0.0);
    for (n, before) in frozen {
        assert_eq!(t.model.params.get(&n).unwrap().data(), before.as_slice(), "{n} moved");
    }
}
