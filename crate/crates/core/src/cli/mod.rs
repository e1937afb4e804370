//! The `mimt` command line. Exit codes: 0 success, 1 a check failed, 2 bad input.

mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::dsp::{multiscale_mel_loss, read_wav, write_wav, Waveform};
use crate::framing::{
    bitrate_bps, delay_apply, delay_remove, patch_rate_hz, patchify, unpatchify, DelayConfig, DelayedPatch, Element,
    InterleavedSequence, TokenFile, FRAME_RATE_HZ,
};
use crate::model::{generate, synthetic_corpus, GenerationSettings, Model, ModelConfig, Stage, Trainer, TrainingFile};
use crate::nn::ParamTree;
use crate::rvq::AudioTokenMatrix;
use crate::tokenizer::{to_model_rate, Tokenizer, TokenizerConfig};

pub use verify::{run_suites, SuiteResult};

/// Environment variable that overrides every seed.
pub const SEED_ENV: &str = "MIMT_SEED";

#[derive(Debug, Parser)]
#[command(name = "mimt", version, about = "Audio tokens, delay codec and a toy patch-level language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// WAV to token file.
    Tokenize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        group: usize,
    },
    /// Token file to WAV via Griffin-Lim.
    Detokenize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        codebooks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Source audio to compare the reconstruction against.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Applies the per-codebook delay to every patch of a token file.
    Delay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated delays, one per codebook. Defaults to 0, 1, 2, ...
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<usize>>,
    },
    /// Inverse of `delay`.
    Undelay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        delays: Option<Vec<usize>>,
    },
    /// Rates, bitrate and sizes implied by a configuration.
    Info {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Multi-scale mel loss between two WAV files.
    MelLoss { a: PathBuf, b: PathBuf },
    /// Fits the projection and RVQ codebooks on WAV files.
    TrainRvq {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Trains the toy language model on its synthetic corpus.
    TrainLm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stage: Option<Stage>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint path; the training config is written to `<out>.toml`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// JSON-lines metrics file. Defaults to stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Continues a corpus prompt with a trained model.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training config; defaults to `<checkpoint>.toml`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        prompt_index: usize,
        #[arg(long, default_value_t = 1)]
        prompt_len: usize,
        #[arg(long, default_value_t = 64)]
        max_elements: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 1)]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generated audio tokens.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "codebooks")]
        wav: Option<PathBuf>,
        #[arg(long)]
        codebooks: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of the toy model and losses.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        per_tensor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Runs the built-in property suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn seed_or_env(seed: u64) -> anyhow::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().with_context(|| format!("{SEED_ENV}={s} is not an unsigned integer")),
        Err(_) => Ok(seed),
    }
}

fn read_tokens(path: &Path) -> anyhow::Result<TokenFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    TokenFile::from_bytes(&bytes).with_context(|| format!("parsing token file {}", path.display()))
}

fn write_tokens(path: &Path, f: &TokenFile) -> anyhow::Result<()> {
    std::fs::write(path, f.to_bytes()?).with_context(|| format!("writing {}", path.display()))
}

fn load_wav(path: &Path) -> anyhow::Result<Waveform> {
    let w = read_wav(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(to_model_rate(w))
}

fn load_tokenizer(path: &Path) -> anyhow::Result<Tokenizer> {
    Tokenizer::load(path).with_context(|| format!("loading codebooks {}", path.display()))
}

fn load_training_file(path: Option<&Path>) -> anyhow::Result<TrainingFile> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainingFile::from_toml(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(TrainingFile::default()),
    }
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

fn default_delays(layers: usize, given: Option<Vec<usize>>) -> anyhow::Result<DelayConfig> {
    let d = given.unwrap_or_else(|| (0..layers).collect());
    if d.len() != layers {
        bail!("{} delays given for {layers} codebooks", d.len());
    }
    Ok(DelayConfig::new(d)?)
}

/// Runs one command, writing reports to `out`.
pub fn run(cmd: Command, out: &mut dyn Write) -> anyhow::Result<i32> {
    match cmd {
        Command::Tokenize { input, codebooks, out: dst, group } => {
            let tok = load_tokenizer(&codebooks)?;
            let w = load_wav(&input)?;
            let tokens = tok.tokenize(&w).with_context(|| format!("tokenizing {}", input.display()))?;
            write_tokens(&dst, &TokenFile::from_matrix(&tokens, group)?)?;
            writeln!(out, "{} frames x {} codebooks = {} indices", tokens.frames(), tokens.layers(), tokens.indices().len())?;
        }
        Command::Detokenize { input, codebooks, out: dst, reference, iterations, seed } => {
            let tok = load_tokenizer(&codebooks)?;
            let tokens = read_tokens(&input)?.to_matrix()?;
            let w = tok.detokenize(&tokens, iterations, seed_or_env(seed)?)?;
            write_wav(&dst, &w)?;
            writeln!(out, "{} samples ({:.3} s)", w.len(), w.duration_secs())?;
            if let Some(r) = reference {
                let src = load_wav(&r)?;
                let n = src.len().min(w.len());
                let a = Waveform::new(src.samples[..n].to_vec(), src.sample_rate);
                let b = Waveform::new(w.samples[..n].to_vec(), w.sample_rate);
                let loss = multiscale_mel_loss(&a, &b)?;
                log::info!("multiscale mel loss against {}: {loss:.6}", r.display());
                writeln!(out, "mel loss {loss:.6}")?;
            }
        }
        Command::Delay { input, out: dst, delays } => {
            let f = read_tokens(&input)?;
            let d = default_delays(f.layers(), delays)?;
            let group = usize::from(f.group);
            let patches = patchify(&f.to_matrix()?, group)?;
            let mut slots = Vec::new();
            for p in &patches {
                slots.extend_from_slice(delay_apply(p, &d)?.slots());
            }
            let delayed = TokenFile { slots, ..f };
            write_tokens(&dst, &delayed)?;
            writeln!(out, "{} patches, {} rows each", patches.len(), d.delayed_len(group))?;
        }
        Command::Undelay { input, out: dst, delays } => {
            let f = read_tokens(&input)?;
            let d = default_delays(f.layers(), delays)?;
            let group = usize::from(f.group);
            let chunk = d.delayed_len(group) * f.layers();
            if chunk == 0 || f.slots.len() % chunk != 0 {
                bail!("{} slots are not a whole number of delayed patches of {chunk}", f.slots.len());
            }
            let patches = f
                .slots
                .chunks_exact(chunk)
                .map(|c| delay_remove(&DelayedPatch::from_slots(f.layers(), c.to_vec())?, &d, group))
                .collect::<crate::Result<Vec<_>>>()?;
            let sizes: Vec<usize> = f.codebook_sizes.iter().map(|&k| usize::from(k)).collect();
            let m = unpatchify(&patches, &sizes)?;
            let mut plain = TokenFile::from_matrix(&m, group)?;
            plain.frame_rate = f.frame_rate;
            write_tokens(&dst, &plain)?;
            writeln!(out, "{} frames", m.frames())?;
        }
        Command::Info { config } => info(&load_training_file(config.as_deref())?.model, out)?,
        Command::MelLoss { a, b } => {
            let (x, y) = (load_wav(&a)?, load_wav(&b)?);
            writeln!(out, "{:.6}", multiscale_mel_loss(&x, &y)?)?;
        }
        Command::TrainRvq { inputs, out: dst, config, seed } => {
            let cfg: TokenizerConfig = match config {
                Some(p) => toml::from_str(&std::fs::read_to_string(&p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => TokenizerConfig::default(),
            };
            let waves = inputs.iter().map(|p| load_wav(p)).collect::<anyhow::Result<Vec<_>>>()?;
            let mut rng = crate::util::seeded(seed_or_env(seed)?);
            let (tok, report) = Tokenizer::train(&waves, &cfg, &mut rng)?;
            tok.save(&dst)?;
            writeln!(out, "{}", serde_json::to_string(&report)?)?;
        }
        Command::TrainLm { config, stage, steps, seed, out: dst, metrics } => {
            let mut file = load_training_file(config.as_deref())?;
            if let Some(s) = stage {
                file.train.stage = s;
            }
            if let Some(n) = steps {
                file.train.steps = n;
            }
            file.train.seed = seed_or_env(seed.unwrap_or(file.train.seed))?;
            train_lm(&file, dst.as_deref(), metrics.as_deref(), out)?;
        }
        Command::Generate { checkpoint, config, prompt_index, prompt_len, max_elements, temperature, top_k, seed, out: dst, wav, codebooks } => {
            let cfg_path = config.unwrap_or_else(|| sidecar(&checkpoint, ".toml"));
            let file = load_training_file(Some(&cfg_path))?;
            let params = ParamTree::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let model = Model::from_params(file.model.clone(), params)?;
            let corpus = synthetic_corpus(&model.config, &file.corpus)?;
            let seq = corpus.get(prompt_index).with_context(|| format!("prompt index {prompt_index} outside corpus of {}", corpus.len()))?;
            if prompt_len == 0 || prompt_len > seq.len() {
                bail!("prompt length {prompt_len} must be in 1..={}", seq.len());
            }
            let prompt = InterleavedSequence::new(seq.elements[..prompt_len].to_vec());
            let settings = GenerationSettings { temperature, top_k, max_elements, seed: seed_or_env(seed)? };
            let g = generate(&model, &prompt, &settings)?;
            let new = &g.sequence.elements[g.prompt_len..];
            let patches: Vec<_> = new.iter().filter_map(|e| if let Element::Audio(p) = e { Some(p.clone()) } else { None }).collect();
            let tokens = if patches.is_empty() {
                AudioTokenMatrix::empty(model.config.codebook_sizes.clone())
            } else {
                unpatchify(&patches, &model.config.codebook_sizes)?
            };
            write_tokens(&dst, &TokenFile::from_matrix(&tokens, model.config.group)?)?;
            let text: Vec<u32> = new.iter().filter_map(|e| if let Element::Text(t) = e { Some(*t) } else { None }).collect();
            let summary = serde_json::json!({ "elements": new.len(), "text": text, "patches": patches.len(), "frames": tokens.frames(), "truncated": g.truncated });
            writeln!(out, "{summary}")?;
            if let (Some(wav), Some(cb)) = (wav, codebooks) {
                if tokens.frames() == 0 {
                    bail!("no audio was generated, nothing to write to {}", wav.display());
                }
                let tok = load_tokenizer(&cb)?;
                write_wav(&wav, &tok.detokenize(&tokens, 32, settings.seed)?)?;
            }
        }
        Command::Gradcheck { per_tensor, seed } => {
            let results = verify::gradcheck_components(per_tensor, seed_or_env(seed)?)?;
            let mut ok = true;
            for (name, err) in &results {
                let pass = *err < verify::GRADCHECK_TOLERANCE;
                ok &= pass;
                writeln!(out, "{name:<14} max rel error {err:.3e} {}", if pass { "ok" } else { "FAIL" })?;
            }
            return Ok(if ok { 0 } else { 1 });
        }
        Command::Verify { seed } => {
            let results = run_suites(seed_or_env(seed)?);
            let passed = results.iter().filter(|r| r.passed).count();
            for r in &results {
                writeln!(out, "suite {:<14} {} {}", r.name, if r.passed { "ok  " } else { "FAIL" }, r.detail)?;
            }
            writeln!(out, "{passed}/{} suites passed", results.len())?;
            return Ok(if passed == results.len() { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn info(m: &ModelConfig, out: &mut dyn Write) -> anyhow::Result<()> {
    m.validate()?;
    let bps = bitrate_bps(FRAME_RATE_HZ, &m.codebook_sizes);
    let sizes: Vec<String> = m.codebook_sizes.iter().map(ToString::to_string).collect();
    let delays: Vec<String> = m.delays.iter().map(ToString::to_string).collect();
    writeln!(out, "codebooks {}", sizes.join(" "))?;
    writeln!(out, "frame rate {FRAME_RATE_HZ} Hz")?;
    writeln!(out, "tokens per second {}", FRAME_RATE_HZ as usize * m.layers())?;
    writeln!(out, "bitrate {bps} bps ({} kbps)", bps / 1000.0)?;
    writeln!(out, "patch size {} frames", m.group)?;
    writeln!(out, "patch rate {} Hz", patch_rate_hz(FRAME_RATE_HZ, m.group))?;
    writeln!(out, "delays {}", delays.join(" "))?;
    writeln!(out, "delayed length {}", m.delayed_len())?;
    writeln!(out, "text vocabulary {}", m.text_vocab())?;
    writeln!(out, "context {} positions", m.context)?;
    Ok(())
}

fn train_lm(file: &TrainingFile, dst: Option<&Path>, metrics: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<()> {
    let model = Model::new(file.model.clone(), file.train.seed)?;
    let corpus = synthetic_corpus(&model.config, &file.corpus)?;
    let mut trainer = Trainer::new(model, file.train.clone(), file.stage_weights())?;
    let mut sink: Box<dyn Write + '_> = match metrics {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(&mut *out),
    };
    let mut io_err = None;
    let report = trainer.fit(&corpus, |m| {
        if io_err.is_none() {
            if let Err(e) = serde_json::to_string(m).map_err(std::io::Error::from).and_then(|s| writeln!(sink, "{s}")) {
                io_err = Some(e);
            }
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let done = serde_json::json!({ "final": true, "step": trainer.step(), "loss": report.normalized(), "stage": file.train.stage.to_string() });
    writeln!(sink, "{done}")?;
    sink.flush()?;
    drop(sink);
    if let Some(p) = dst {
        trainer.model.params.save(p).with_context(|| format!("writing {}", p.display()))?;
        std::fs::write(sidecar(p, ".toml"), file.to_toml()?)?;
    }
    Ok(())
}
