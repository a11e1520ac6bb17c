//! Run configuration: preset defaults, then an optional `key=value` file, then
//! command-line flags. Later sources win.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use muvf_core::model::{ModelConfig, ScorerKind};
use muvf_core::separator::LossWeights;
use muvf_core::train::TrainConfig;

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonFlags {
    /// `key=value` file; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Topology preset: desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub nmax: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub corpus_key: Option<u64>,
    /// Weights of the reconstruction, noise and attention losses: `a,b,c`.
    #[arg(long)]
    pub loss_weights: Option<String>,
    #[arg(long)]
    pub alpha_asym: Option<f64>,
    /// Suppression memory in `[0, 1)`.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Attention scorer: net or cosine.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub beta: f64,
    /// Whether any topology key was given explicitly (file or flag).
    pub topology_explicit: bool,
}

const TOPOLOGY_KEYS: &[&str] = &[
    "preset",
    "nmax",
    "embed_dim",
    "prenet",
    "scorer_widths",
    "mask_lstm",
    "noise_lstm",
    "noise_fc",
    "scorer",
];

const KNOWN_KEYS: &[&str] = &[
    "preset",
    "nmax",
    "embed_dim",
    "prenet",
    "scorer_widths",
    "mask_lstm",
    "noise_lstm",
    "noise_fc",
    "scorer",
    "steps",
    "batch",
    "seed",
    "corpus_key",
    "loss_weights",
    "alpha_asym",
    "beta",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "clip",
    "lr_final",
    "length",
    "snr_min",
    "snr_max",
    "zero_replace",
    "validate_every",
    "validation_size",
];

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key=value", i + 1))?;
        let k = k.trim().replace('-', "_");
        if !KNOWN_KEYS.contains(&k.as_str()) {
            bail!("line {}: unknown key `{k}`", i + 1);
        }
        out.insert(k, v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("bad value `{v}` for `{k}`"))
}

fn widths(k: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| num(k, p.trim())).collect()
}

impl CommonFlags {
    fn as_kv(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        put("preset", self.preset.clone());
        put("nmax", self.nmax.map(|x| x.to_string()));
        put("steps", self.steps.map(|x| x.to_string()));
        put("batch", self.batch.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("corpus_key", self.corpus_key.map(|x| x.to_string()));
        put("loss_weights", self.loss_weights.clone());
        put("alpha_asym", self.alpha_asym.map(|x| x.to_string()));
        put("beta", self.beta.map(|x| x.to_string()));
        put("scorer", self.scorer.clone());
        put("lr", self.lr.map(|x| x.to_string()));
        v
    }
}

impl RunConfig {
    pub fn resolve(flags: &CommonFlags) -> Result<Self> {
        let mut kv = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_kv(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags.as_kv() {
            kv.insert(k.to_string(), v);
        }
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| kv.get(k).map(String::as_str);
        let mut model = match get("preset").unwrap_or("desk") {
            "desk" => ModelConfig::desk(),
            "full" => ModelConfig::full(),
            other => bail!("unknown preset `{other}` (expected desk or full)"),
        };
        if let Some(v) = get("nmax") {
            model.n_max = num("nmax", v)?;
        }
        if let Some(v) = get("embed_dim") {
            model.embed_dim = num("embed_dim", v)?;
        }
        if let Some(v) = get("prenet") {
            model.prenet = widths("prenet", v)?;
        }
        if let Some(v) = get("scorer_widths") {
            model.scorer = widths("scorer_widths", v)?;
        }
        if let Some(v) = get("mask_lstm") {
            model.mask_lstm = widths("mask_lstm", v)?;
        }
        if let Some(v) = get("noise_lstm") {
            model.noise_lstm = widths("noise_lstm", v)?;
        }
        if let Some(v) = get("noise_fc") {
            model.noise_fc = num("noise_fc", v)?;
        }
        match get("scorer").unwrap_or("net") {
            "net" => {}
            "cosine" => model = model.with_cosine_scorer(),
            other => bail!("unknown scorer `{other}` (expected net or cosine)"),
        }
        if model.n_max == 0 {
            bail!("nmax must be at least 1");
        }

        let mut t = TrainConfig::new(model);
        if let Some(v) = get("steps") {
            t.steps = num("steps", v)?;
        }
        if let Some(v) = get("batch") {
            t.batch = num("batch", v)?;
        }
        if let Some(v) = get("seed") {
            t.seed = num("seed", v)?;
        }
        if let Some(v) = get("corpus_key") {
            t.corpus_key = num("corpus_key", v)?;
        }
        if let Some(v) = get("loss_weights") {
            let w: Vec<f64> = v.split(',').map(|p| num("loss_weights", p.trim())).collect::<Result<_>>()?;
            let [asym, noise, att] = w[..] else { bail!("loss_weights needs three values a,b,c") };
            t.weights = LossWeights { asym, noise, att };
        }
        if let Some(v) = get("alpha_asym") {
            t.alpha_asym = num("alpha_asym", v)?;
        }
        if let Some(v) = get("lr") {
            t.adam.lr = num("lr", v)?;
        }
        if let Some(v) = get("adam_beta1") {
            t.adam.beta1 = num("adam_beta1", v)?;
        }
        if let Some(v) = get("adam_beta2") {
            t.adam.beta2 = num("adam_beta2", v)?;
        }
        if let Some(v) = get("adam_eps") {
            t.adam.eps = num("adam_eps", v)?;
        }
        if let Some(v) = get("clip") {
            t.clip = num("clip", v)?;
        }
        if let Some(v) = get("lr_final") {
            t.lr_final = num("lr_final", v)?;
        }
        if let Some(v) = get("length") {
            t.sampler.length = num("length", v)?;
        }
        if let Some(v) = get("snr_min") {
            t.sampler.snr_range.0 = num("snr_min", v)?;
        }
        if let Some(v) = get("snr_max") {
            t.sampler.snr_range.1 = num("snr_max", v)?;
        }
        if let Some(v) = get("zero_replace") {
            t.sampler.zero_replace = num("zero_replace", v)?;
        }
        if let Some(v) = get("validate_every") {
            t.validate_every = num("validate_every", v)?;
        }
        if let Some(v) = get("validation_size") {
            t.validation_size = num("validation_size", v)?;
        }
        let beta = match get("beta") {
            Some(v) => num("beta", v)?,
            None => 0.9,
        };
        if !(0.0..1.0).contains(&beta) {
            bail!("beta must lie in [0, 1), got {beta}");
        }
        t.validate().map_err(|e| anyhow!(e))?;
        let topology_explicit = TOPOLOGY_KEYS.iter().any(|k| kv.contains_key(*k));
        Ok(Self { train: t, beta, topology_explicit })
    }

    /// Resolved configuration as `key=value` lines, readable by `--config`.
    pub fn to_kv(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let l = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut lines = vec![
            format!("nmax={}", m.n_max),
            format!("embed_dim={}", m.embed_dim),
            format!("prenet={}", l(&m.prenet)),
            format!("mask_lstm={}", l(&m.mask_lstm)),
            format!("noise_lstm={}", l(&m.noise_lstm)),
            format!("noise_fc={}", m.noise_fc),
            format!("scorer={}", m.scorer_kind.name()),
        ];
        if m.scorer_kind == ScorerKind::Net {
            lines.push(format!("scorer_widths={}", l(&m.scorer)));
        }
        lines.extend([
            format!("steps={}", t.steps),
            format!("batch={}", t.batch),
            format!("seed={}", t.seed),
            format!("corpus_key={}", t.corpus_key),
            format!("loss_weights={},{},{}", t.weights.asym, t.weights.noise, t.weights.att),
            format!("alpha_asym={}", t.alpha_asym),
            format!("beta={}", self.beta),
            format!("lr={}", t.adam.lr),
            format!("adam_beta1={}", t.adam.beta1),
            format!("adam_beta2={}", t.adam.beta2),
            format!("adam_eps={}", t.adam.eps),
            format!("clip={}", t.clip),
            format!("lr_final={}", t.lr_final),
            format!("length={}", t.sampler.length),
            format!("snr_min={}", t.sampler.snr_range.0),
            format!("snr_max={}", t.sampler.snr_range.1),
            format!("zero_replace={}", t.sampler.zero_replace),
            format!("validate_every={}", t.validate_every),
            format!("validation_size={}", t.validation_size),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_desk_preset() {
        let c = RunConfig::resolve(&CommonFlags::default()).unwrap();
        assert_eq!(c.train.model, ModelConfig::desk());
        assert_eq!(c.beta, 0.9);
        assert!(!c.topology_explicit);
    }

    #[test]
    fn flags_override_file_values() {
        let mut kv = parse_kv("steps = 7\nseed=3 # comment\nloss-weights=1,0,1\n").unwrap();
        kv.insert("steps".into(), "9".into());
        let c = RunConfig::from_kv(&kv).unwrap();
        assert_eq!((c.train.steps, c.train.seed), (9, 3));
        assert_eq!(c.train.weights, LossWeights { asym: 1.0, noise: 0.0, att: 1.0 });
    }

    #[test]
    fn round_trips_through_kv() {
        let mut kv = BTreeMap::new();
        kv.insert("scorer".to_string(), "cosine".to_string());
        kv.insert("nmax".to_string(), "3".to_string());
        let c = RunConfig::from_kv(&kv).unwrap();
        let again = RunConfig::from_kv(&parse_kv(&c.to_kv()).unwrap()).unwrap();
        assert_eq!(c.train, again.train);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in ["nmax=0", "preset=huge", "loss_weights=1,2", "beta=1", "scorer=dot", "bogus=1", "lr=-1"] {
            assert!(parse_kv(bad).and_then(|kv| RunConfig::from_kv(&kv)).is_err(), "{bad}");
        }
    }
}
