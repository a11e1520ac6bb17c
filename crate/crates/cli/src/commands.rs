use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use muvf_core::attention::trace_line;
use muvf_core::frontend::{parse_wav, read_feature_dump, write_feature_dump, FeatureFrame, Frontend, FEATURE_DIM};
use muvf_core::metrics::{trend_report, EvalGrid};
use muvf_core::model::Model;
use muvf_core::nn::load_checkpoint;
use muvf_core::speaker::{pad_slots, read_enrollment, write_enrollment, Corpus};
use muvf_core::synth::sample_training_pair;
use muvf_core::train::{Trainer, LOG_HEADER};

use crate::config::{CommonFlags, RunConfig};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    /// Output directory for checkpoints, the training log and the resolved config.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Utterances per grid cell.
    #[arg(long, default_value_t = 32)]
    pub utterances: usize,
    /// Stacked frames per utterance.
    #[arg(long, default_value_t = 80)]
    pub length: usize,
    #[arg(long, default_value_t = 7)]
    pub eval_seed: u64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 16 kHz mono WAV or a feature dump.
    #[arg(long)]
    pub input: PathBuf,
    /// One enrolled speaker per line: `id v1 … vD`.
    #[arg(long)]
    pub enroll: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub common: CommonFlags,
    #[arg(long)]
    pub count: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write mixture and clean feature dumps and the enrollment list of every example.
    #[arg(long)]
    pub materialize: bool,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<Model<f32>> {
    let bytes = read(path)?;
    let expected = cfg.topology_explicit.then_some(&cfg.train.model);
    Model::from_checkpoint(&bytes, expected).with_context(|| format!("loading {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.common)?;
    create_dir(&a.out)?;
    write(&a.out.join("config.txt"), cfg.to_kv())?;
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let log_path = a.out.join("train_log.tsv");
    let mut log = std::io::BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{LOG_HEADER}")?;
    let mut io_err = None;
    let every = (cfg.train.steps / 20).max(1);
    let outcome = trainer.run(|s| {
        if let Err(e) = writeln!(log, "{}", s.tsv()) {
            io_err.get_or_insert(e);
        }
        if (s.step + 1) % every == 0 {
            eprintln!("step {} total {:.4}", s.step + 1, s.loss.total);
        }
    });
    log.flush()?;
    if let Some(e) = io_err {
        return Err(e).context("writing the training log");
    }
    let outcome = outcome?;
    write(&a.out.join("final.ckpt"), &outcome.final_checkpoint)?;
    write(&a.out.join("best.ckpt"), &outcome.best_checkpoint)?;
    println!("best validation loss {}", outcome.best_validation);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.common)?;
    let model = load_model(&a.checkpoint, &cfg)?;
    if a.utterances < 2 || a.length < 8 {
        bail!("need at least 2 utterances of at least 8 frames per cell");
    }
    let corpus = Corpus::new(cfg.train.corpus_key, model.config().embed_dim);
    let grid = EvalGrid {
        n_max: model.config().n_max,
        utterances: a.utterances,
        length: a.length,
        seed: a.eval_seed,
        beta: cfg.beta as f32,
    };
    let report = trend_report(&model, &corpus, &grid)?;
    create_dir(&a.out)?;
    let tsv = report.to_tsv();
    write(&a.out.join("report.tsv"), &tsv)?;
    write(&a.out.join("report.svg"), report.to_svg())?;
    print!("{tsv}");
    Ok(())
}

fn read_input(path: &Path) -> Result<Vec<FeatureFrame>> {
    let bytes = read(path)?;
    if bytes.starts_with(b"RIFF") {
        let audio = parse_wav(&bytes).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(Frontend::default().features(&audio)?);
    }
    let text = String::from_utf8(bytes).map_err(|_| anyhow!("{} is neither a WAV file nor a text feature dump", path.display()))?;
    let (frames, width) = read_feature_dump(&text).with_context(|| format!("parsing {}", path.display()))?;
    if width != FEATURE_DIM {
        bail!("feature dump has width {width}, expected {FEATURE_DIM}");
    }
    Ok(frames)
}

pub fn infer(a: InferArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.common)?;
    let model = load_model(&a.checkpoint, &cfg)?;
    let frames = read_input(&a.input)?;
    let enroll_text = String::from_utf8(read(&a.enroll)?).map_err(|_| anyhow!("enrollment file is not UTF-8"))?;
    let entries = read_enrollment(&enroll_text, model.config().embed_dim).context("parsing the enrollment file")?;
    let ids: Vec<_> = entries.iter().map(|(id, _)| id.as_str()).collect();
    let vectors: Vec<_> = entries.iter().map(|(_, e)| e.clone()).collect();
    let slots = pad_slots(&vectors, model.config().n_max)?;
    let mut session = model.stream(&slots, cfg.beta as f32)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut trace = format!("# slots: {}\n", ids.join(" "));
    for (t, f) in frames.iter().enumerate() {
        let o = session.push_frame(f)?;
        trace.push_str(&trace_line(t, &o.alpha, Some((o.w, o.p_overlap))));
        trace.push('\n');
        out.push(FeatureFrame(o.output));
    }
    session.close();
    create_dir(&a.out)?;
    write(&a.out.join("enhanced.txt"), write_feature_dump(&out, FEATURE_DIM))?;
    write(&a.out.join("attention.txt"), trace)?;
    Ok(())
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let bytes = read(&a.checkpoint)?;
    let ck = load_checkpoint(&bytes).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let model = Model::from_checkpoint(&bytes, None)?;
    let mut s = String::new();
    writeln!(s, "format version {}", ck.version)?;
    for (k, v) in &ck.config {
        writeln!(s, "{k} = {v}")?;
    }
    writeln!(s, "tensors {}", ck.entries.len())?;
    for e in &ck.entries {
        let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
        writeln!(s, "  {} {}", e.name, shape.join("x"))?;
    }
    writeln!(s, "parameters {}", model.params.scalar_count())?;
    writeln!(s, "closed-form parameters {}", model.config().param_count())?;
    print!("{s}");
    Ok(())
}

pub fn features(a: FeaturesArgs) -> Result<()> {
    let audio = parse_wav(&read(&a.input)?).with_context(|| format!("parsing {}", a.input.display()))?;
    let frames = Frontend::default().features(&audio)?;
    write(&a.out, write_feature_dump(&frames, FEATURE_DIM))
}

pub fn gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&a.common)?;
    let t = &cfg.train;
    let corpus = t.corpus();
    create_dir(&a.out)?;
    let mut manifest = String::from("example_id\ttarget_seed\tinterferer\tsnr_db\tlength\tactive\texample_seed\tseed\n");
    for i in 0..a.count {
        let (spec, ex) = sample_training_pair(&t.sampler, &corpus, t.seed, i)?;
        writeln!(manifest, "{i}\t{}\t{}", spec.manifest_fields(), t.seed)?;
        if a.materialize {
            write(&a.out.join(format!("ex{i}.mix.txt")), write_feature_dump(&ex.mixture, FEATURE_DIM))?;
            write(&a.out.join(format!("ex{i}.clean.txt")), write_feature_dump(&ex.clean, FEATURE_DIM))?;
            let entries: Vec<_> = ex
                .slots
                .active()
                .iter()
                .enumerate()
                .map(|(k, e)| (if k == ex.target_index { format!("target{k}") } else { format!("slot{k}") }, e.clone()))
                .collect();
            write(&a.out.join(format!("ex{i}.enroll.txt")), write_enrollment(&entries))?;
        }
    }
    write(&a.out.join("manifest.tsv"), manifest)
}
