use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mimt_core::dsp::{read_wav, write_wav, Waveform, SAMPLE_RATE};
use mimt_core::framing::TokenFile;
use mimt_core::model::{CorpusConfig, ModelConfig, TrainConfig, TrainingFile};
use tempfile::TempDir;

fn mimt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimt")).args(args).env_remove("MIMT_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn chord(samples: usize) -> Waveform {
    let sr = SAMPLE_RATE as f64;
    let x = (0..samples)
        .map(|i| {
            let t = i as f64 / sr;
            0.3 * (2.0 * std::f64::consts::PI * 220.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 550.0 * t).sin()
        })
        .collect();
    Waveform::new(x, SAMPLE_RATE)
}

/// Writes a short WAV and trains small codebooks on it.
fn codebooks(dir: &TempDir) -> (PathBuf, PathBuf) {
    let wav = dir.path().join("in.wav");
    write_wav(&wav, &chord(2 * SAMPLE_RATE as usize)).unwrap();
    let cfg = dir.path().join("rvq.toml");
    std::fs::write(&cfg, "dim = 8\ncodebook_sizes = [16, 16, 8, 8, 8, 8, 8, 8]\nepochs = 3\nbatch_size = 32\n").unwrap();
    let ckpt = dir.path().join("codebooks.rvq");
    let o = mimt(&["train-rvq", "--in", s(&wav), "--out", s(&ckpt), "--config", s(&cfg), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["frames"], 50);
    (wav, ckpt)
}

#[test]
fn info_reports_rates() {
    let o = mimt(&["info"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in ["bitrate 1550 bps (1.55 kbps)", "tokens per second 200", "patch rate 6.25 Hz", "delayed length 11"] {
        assert!(text.contains(needle), "missing {needle:?} in\n{text}");
    }
}

#[test]
fn tokenize_detokenize_and_delay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (wav, ckpt) = codebooks(&dir);
    let tokens = dir.path().join("t.mimt");
    let o = mimt(&["tokenize", "--in", s(&wav), "--codebooks", s(&ckpt), "--out", s(&tokens)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("50 frames x 8 codebooks = 400 indices"));

    let tf = TokenFile::from_bytes(&std::fs::read(&tokens).unwrap()).unwrap();
    assert_eq!((tf.frames(), tf.layers(), tf.group), (50, 8, 4));

    let out = dir.path().join("out.wav");
    let o = mimt(&["detokenize", "--in", s(&tokens), "--codebooks", s(&ckpt), "--out", s(&out), "--reference", s(&wav), "--iterations", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mel loss"));
    let rec = read_wav(&out).unwrap();
    assert!(rec.len().abs_diff(2 * SAMPLE_RATE as usize) <= 240, "length {}", rec.len());

    let delayed = dir.path().join("d.mimt");
    let back = dir.path().join("b.mimt");
    let o = mimt(&["delay", "--in", s(&tokens), "--out", s(&delayed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("13 patches, 11 rows each"));
    let o = mimt(&["undelay", "--in", s(&delayed), "--out", s(&back)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (a, b) = (std::fs::read(&tokens).unwrap(), std::fs::read(&back).unwrap());
    // 50 frames pad to 52 in the last patch; padding frames are dropped again.
    assert_eq!(a, b);

    let o = mimt(&["undelay", "--in", s(&delayed), "--out", s(&back), "--delays", "0,1,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("3 delays given for 8 codebooks"));
}

#[test]
fn short_clip_gives_one_patch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = codebooks(&dir);
    let wav = dir.path().join("short.wav");
    write_wav(&wav, &chord(3840)).unwrap();
    let tokens = dir.path().join("t.mimt");
    let o = mimt(&["tokenize", "--in", s(&wav), "--codebooks", s(&ckpt), "--out", s(&tokens)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("4 frames"));
    let delayed = dir.path().join("d.mimt");
    let o = mimt(&["delay", "--in", s(&tokens), "--out", s(&delayed)]);
    assert!(stdout(&o).contains("1 patches"));
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ckpt) = codebooks(&dir);

    let empty = dir.path().join("empty.wav");
    write_wav(&empty, &Waveform::new(Vec::new(), SAMPLE_RATE)).unwrap();
    let o = mimt(&["tokenize", "--in", s(&empty), "--codebooks", s(&ckpt), "--out", s(&dir.path().join("x.mimt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty input"), "{}", stderr(&o));

    let missing = dir.path().join("nope.rvq");
    let o = mimt(&["tokenize", "--in", s(&empty), "--codebooks", s(&missing), "--out", s(&dir.path().join("x.mimt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.rvq"));

    let not_wav = dir.path().join("junk.wav");
    std::fs::write(&not_wav, b"definitely not audio").unwrap();
    let o = mimt(&["mel-loss", s(&not_wav), s(&not_wav)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));

    let o = mimt(&["tokenize"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mel_loss_of_identical_files_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("a.wav");
    write_wav(&wav, &chord(4800)).unwrap();
    let o = mimt(&["mel-loss", s(&wav), s(&wav)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.000000");
}

fn tiny_training(dir: &TempDir, steps: usize) -> PathBuf {
    let file = TrainingFile {
        model: ModelConfig::tiny(),
        train: TrainConfig { steps, batch_size: 4, ..TrainConfig::default() },
        corpus: CorpusConfig { sequences: 4, text_len: 4, text_run: 2, audio_run: 2, seed: 0 },
        weights: None,
    };
    let p = dir.path().join("train.toml");
    std::fs::write(&p, file.to_toml().unwrap()).unwrap();
    p
}

#[test]
fn train_lm_then_generate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_training(&dir, 5);
    let ckpt = dir.path().join("lm.mimp");
    let metrics = dir.path().join("m.jsonl");
    let o = mimt(&["train-lm", "--config", s(&cfg), "--out", s(&ckpt), "--metrics", s(&metrics), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&metrics).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[..5].iter().all(|l| l["loss"].as_f64().unwrap().is_finite()));
    assert_eq!(lines[5]["final"], true);
    assert!(Path::new(&format!("{}.toml", s(&ckpt))).exists());

    let tokens = dir.path().join("gen.mimt");
    let o = mimt(&["generate", "--checkpoint", s(&ckpt), "--max-elements", "6", "--out", s(&tokens)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(summary["elements"].as_u64().unwrap() <= 6);
    TokenFile::from_bytes(&std::fs::read(&tokens).unwrap()).unwrap();

    let o = mimt(&["generate", "--checkpoint", s(&ckpt), "--prompt-index", "99", "--out", s(&tokens)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("prompt index 99"));
}

#[test]
fn fixed_seed_gives_identical_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_training(&dir, 3);
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let o = mimt(&["train-lm", "--config", s(&cfg), "--out", s(&ckpt), "--seed", "11"]);
        assert!(o.status.success(), "{}", stderr(&o));
        (stdout(&o), std::fs::read(&ckpt).unwrap())
    };
    assert_eq!(run("a.mimp"), run("b.mimp"));
}

#[test]
fn verify_and_gradcheck_pass() {
    let o = mimt(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("11/11 suites passed"));
    let o = mimt(&["gradcheck", "--per-tensor", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for name in ["model", "discriminator", "mel-loss"] {
        assert!(stdout(&o).contains(name));
    }
}
