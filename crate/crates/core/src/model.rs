//! The multi-user separator: PreNet keys, slot scoring, attentive embedding,
//! mask network, noise-type predictor, training losses and streaming.
//!
//! Slots are processed in a canonical order (lexicographic on their values)
//! chosen per example, so every floating-point reduction over slots happens in
//! the same order whatever order the caller passed. Outputs are therefore
//! bit-identical under slot permutation; attention weights are mapped back to
//! the caller's order before they are returned.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{CheckpointError, ConfigError, Error, UsageError};
use crate::frontend::{FeatureFrame, FEATURE_DIM};
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, ConfigEcho, Dense, Graph, Lstm, LstmState, LstmVars, ParamStore,
    Tensor, Var,
};
use crate::rng::{rng_for, tag};
use crate::scalar::Scalar;
use crate::separator::LossWeights;
use crate::speaker::SlotList;
use crate::synth::TrainingExample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScorerKind {
    /// Feedforward scorer on `concat(key, e_i)`.
    Net,
    /// Cosine similarity between key and embedding (ablation).
    Cosine,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Net => "net",
            Self::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "net" => Some(Self::Net),
            "cosine" => Some(Self::Cosine),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub n_max: usize,
    pub prenet: Vec<usize>,
    pub scorer: Vec<usize>,
    pub scorer_kind: ScorerKind,
    pub mask_lstm: Vec<usize>,
    pub noise_lstm: Vec<usize>,
    pub noise_fc: usize,
    /// Fixed affine map `(x − center)·scale` applied to features before they
    /// enter any recurrent layer; the mask still multiplies the raw features.
    pub input_center: f32,
    pub input_scale: f32,
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

impl ModelConfig {
    /// Every layer width of the full-size topology divided by four.
    pub fn desk() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            embed_dim: 64,
            n_max: 4,
            prenet: vec![32, 32, 32],
            scorer: vec![32, 32],
            scorer_kind: ScorerKind::Net,
            mask_lstm: vec![64, 64, 64],
            noise_lstm: vec![32, 32],
            noise_fc: 16,
            input_center: 5.0,
            input_scale: 1.0,
        }
    }

    pub fn full() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            embed_dim: 256,
            n_max: 4,
            prenet: vec![128, 128, 128],
            scorer: vec![128, 128],
            scorer_kind: ScorerKind::Net,
            mask_lstm: vec![256, 256, 256],
            noise_lstm: vec![128, 128],
            noise_fc: 64,
            input_center: 5.0,
            input_scale: 1.0,
        }
    }

    /// Hidden sizes of 4 everywhere, two slots; for gradient checks.
    pub fn micro() -> Self {
        Self {
            feature_dim: FEATURE_DIM,
            embed_dim: 4,
            n_max: 2,
            prenet: vec![4, 4],
            scorer: vec![4, 4],
            scorer_kind: ScorerKind::Net,
            mask_lstm: vec![4, 4],
            noise_lstm: vec![4],
            noise_fc: 4,
            input_center: 5.0,
            input_scale: 1.0,
        }
    }

    /// Switches to cosine scoring; the PreNet top layer is widened to the
    /// embedding dimension so keys and embeddings are comparable.
    pub fn with_cosine_scorer(mut self) -> Self {
        self.scorer_kind = ScorerKind::Cosine;
        self.scorer.clear();
        if let Some(top) = self.prenet.last_mut() {
            *top = self.embed_dim;
        }
        self
    }

    pub fn key_width(&self) -> usize {
        self.prenet.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let widths = [self.feature_dim, self.embed_dim, self.n_max, self.noise_fc];
        if widths.contains(&0) {
            return Err(ConfigError::new(format!("zero width in configuration {self:?}")));
        }
        for (name, l) in [("prenet", &self.prenet), ("mask_lstm", &self.mask_lstm), ("noise_lstm", &self.noise_lstm)] {
            if l.is_empty() || l.contains(&0) {
                return Err(ConfigError::new(format!("`{name}` needs at least one positive width, got {l:?}")));
            }
        }
        if !self.input_center.is_finite() || !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(ConfigError::new("input standardization needs a finite center and a positive scale"));
        }
        if self.scorer.contains(&0) {
            return Err(ConfigError::new(format!("`scorer` has a zero width: {:?}", self.scorer)));
        }
        match self.scorer_kind {
            ScorerKind::Net if self.scorer.is_empty() => {
                Err(ConfigError::new("the feedforward scorer needs at least one hidden layer"))
            }
            ScorerKind::Cosine if self.key_width() != self.embed_dim => Err(ConfigError::new(format!(
                "cosine scoring needs key width {} to equal embedding dimension {}",
                self.key_width(),
                self.embed_dim
            ))),
            _ => Ok(()),
        }
    }

    pub fn echo(&self) -> ConfigEcho {
        [
            ("feature_dim", self.feature_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("n_max", self.n_max.to_string()),
            ("prenet", list(&self.prenet)),
            ("scorer", list(&self.scorer)),
            ("scorer_kind", self.scorer_kind.name().to_string()),
            ("mask_lstm", list(&self.mask_lstm)),
            ("noise_lstm", list(&self.noise_lstm)),
            ("noise_fc", self.noise_fc.to_string()),
            ("input_center", self.input_center.to_string()),
            ("input_scale", self.input_scale.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_echo(echo: &ConfigEcho) -> Result<Self, CheckpointError> {
        let get = |k: &str| {
            echo.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| CheckpointError::MalformedHeader(format!("config echo lacks `{k}`")))
        };
        let bad = |k: &str| CheckpointError::MalformedHeader(format!("bad value for `{k}`"));
        let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| bad(k));
        let lst = |k: &str| parse_list(get(k)?).ok_or_else(|| bad(k));
        let cfg = Self {
            feature_dim: num("feature_dim")?,
            embed_dim: num("embed_dim")?,
            n_max: num("n_max")?,
            prenet: lst("prenet")?,
            scorer: lst("scorer")?,
            scorer_kind: ScorerKind::parse(get("scorer_kind")?).ok_or_else(|| bad("scorer_kind"))?,
            mask_lstm: lst("mask_lstm")?,
            noise_lstm: lst("noise_lstm")?,
            noise_fc: num("noise_fc")?,
            input_center: get("input_center")?.parse().map_err(|_| bad("input_center"))?,
            input_scale: get("input_scale")?.parse().map_err(|_| bad("input_scale"))?,
        };
        cfg.validate().map_err(|e| CheckpointError::MalformedHeader(e.message))?;
        Ok(cfg)
    }

    /// Parameter count from the layer formulas: an LSTM layer with input `D`
    /// and hidden `H` has `4H(D + H) + 4H` scalars, a dense layer `o·i + o`.
    pub fn param_count(&self) -> usize {
        fn lstm(input: usize, hidden: &[usize]) -> usize {
            let mut d = input;
            let mut n = 0;
            for &h in hidden {
                n += 4 * h * (d + h) + 4 * h;
                d = h;
            }
            n
        }
        let dense = |i: usize, o: usize| o * i + o;
        let mut n = lstm(self.feature_dim, &self.prenet);
        if self.scorer_kind == ScorerKind::Net {
            let mut w = self.key_width() + self.embed_dim;
            for &h in &self.scorer {
                n += dense(w, h);
                w = h;
            }
            n += dense(w, 1);
        }
        n += lstm(self.feature_dim + self.embed_dim, &self.mask_lstm);
        n += dense(*self.mask_lstm.last().unwrap(), self.feature_dim);
        n += lstm(self.feature_dim, &self.noise_lstm);
        n += dense(*self.noise_lstm.last().unwrap(), self.noise_fc);
        n += dense(self.noise_fc, 1);
        n
    }
}

/// Recurrent state of all three recurrent sub-networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<S> {
    pub prenet: LstmState<S>,
    pub mask: LstmState<S>,
    pub noise: LstmState<S>,
}

struct StateVars {
    prenet: LstmVars,
    mask: LstmVars,
    noise: LstmVars,
}

/// Per-frame nodes produced by [`Model::frame`].
#[derive(Clone, Copy, Debug)]
pub struct FrameVars {
    pub key: Var,
    /// Scores and weights in canonical slot order.
    pub scores: Var,
    pub alpha: Var,
    pub e_att: Var,
    pub mask: Var,
    pub enhanced: Var,
    pub p_overlap: Var,
}

/// Slot embeddings of a batch in canonical order.
#[derive(Clone, Debug)]
pub struct SlotBatch<S> {
    /// `perms[b][i]` is the caller's index of canonical slot `i` of example `b`.
    pub perms: Vec<Vec<usize>>,
    /// One `B × D` tensor per canonical slot.
    pub tensors: Vec<Tensor<S>>,
}

/// Stable lexicographic order of slot values; `-0.0` and `0.0` compare equal.
pub fn canonical_order(slots: &SlotList) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..slots.capacity()).collect();
    idx.sort_by(|&a, &b| {
        let (x, y) = (slots.slots()[a].values(), slots.slots()[b].values());
        for (p, q) in x.iter().zip(y) {
            match p.partial_cmp(q) {
                Some(Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        Ordering::Equal
    });
    idx
}

impl<S: Scalar> SlotBatch<S> {
    pub fn new(slots: &[&SlotList]) -> Result<Self, ConfigError> {
        let first = slots.first().ok_or_else(|| ConfigError::new("empty slot batch"))?;
        let (n, d) = (first.capacity(), first.dim());
        let perms: Vec<Vec<usize>> = slots.iter().map(|s| canonical_order(s)).collect();
        let mut tensors = Vec::with_capacity(n);
        for i in 0..n {
            let mut data = Vec::with_capacity(slots.len() * d);
            for (s, p) in slots.iter().zip(&perms) {
                if s.capacity() != n || s.dim() != d {
                    return Err(ConfigError::new("slot lists in a batch must share capacity and dimension"));
                }
                data.extend(s.slots()[p[i]].values().iter().map(|&v| S::from_f32(v).unwrap()));
            }
            tensors.push(Tensor::matrix(slots.len(), d, data));
        }
        Ok(Self { perms, tensors })
    }

    pub fn batch(&self) -> usize {
        self.perms.len()
    }

    /// Maps a row of canonical-order weights back to the caller's order.
    pub fn restore(&self, b: usize, canonical: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); canonical.len()];
        for (i, &src) in self.perms[b].iter().enumerate() {
            out[src] = canonical[i];
        }
        out
    }
}

/// Tensors of a training batch, time-major.
#[derive(Clone, Debug)]
pub struct TrainBatch<S> {
    pub xs: Vec<Tensor<S>>,
    pub clean: Vec<Tensor<S>>,
    pub labels: Vec<Tensor<S>>,
    pub e_tar: Tensor<S>,
    pub slots: SlotBatch<S>,
}

fn frames_at<S: Scalar>(seqs: &[&[FeatureFrame]], t: usize) -> Tensor<S> {
    let width = seqs[0][t].0.len();
    let data = seqs.iter().flat_map(|s| s[t].0.iter().map(|&v| S::from_f32(v).unwrap())).collect();
    Tensor::matrix(seqs.len(), width, data)
}

/// Stacks frame `t` of every sequence into `T` tensors of shape `B × F`.
pub fn time_major<S: Scalar>(seqs: &[&[FeatureFrame]]) -> Result<Vec<Tensor<S>>, UsageError> {
    let Some(first) = seqs.first() else { return Ok(Vec::new()) };
    if seqs.iter().any(|s| s.len() != first.len()) {
        return Err(UsageError::new("sequences in a batch must have equal length"));
    }
    Ok((0..first.len()).map(|t| frames_at(seqs, t)).collect())
}

impl<S: Scalar> TrainBatch<S> {
    pub fn from_examples(examples: &[TrainingExample]) -> Result<Self, Error> {
        let mix: Vec<&[FeatureFrame]> = examples.iter().map(|e| e.mixture.as_slice()).collect();
        let clean: Vec<&[FeatureFrame]> = examples.iter().map(|e| e.clean.as_slice()).collect();
        let xs = time_major(&mix)?;
        let clean = time_major(&clean)?;
        let labels = (0..xs.len())
            .map(|t| Tensor::matrix(examples.len(), 1, examples.iter().map(|e| S::from_u8(e.labels[t]).unwrap()).collect()))
            .collect();
        let d = examples[0].slots.dim();
        let e_tar = Tensor::matrix(
            examples.len(),
            d,
            examples
                .iter()
                .flat_map(|e| e.slots.active()[e.target_index].values().iter().map(|&v| S::from_f32(v).unwrap()))
                .collect(),
        );
        let slot_refs: Vec<&SlotList> = examples.iter().map(|e| &e.slots).collect();
        Ok(Self { xs, clean, labels, e_tar, slots: SlotBatch::new(&slot_refs)? })
    }
}

/// Loss nodes of a training graph; all scalars.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub asym: Var,
    pub noise: Var,
    pub att: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub asym: f64,
    pub noise: f64,
    pub att: f64,
    pub total: f64,
}

impl LossVars {
    pub fn values<S: Scalar>(&self, g: &Graph<'_, S>) -> LossValues {
        let v = |x: Var| g.value(x).data()[0].to_f64_lossy();
        LossValues { asym: v(self.asym), noise: v(self.noise), att: v(self.att), total: v(self.total) }
    }
}

/// Inference result for one frame of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameOutput<S> {
    pub key: Vec<S>,
    /// Attention weights in the caller's slot order.
    pub alpha: Vec<S>,
    pub e_att: Vec<S>,
    pub mask: Vec<S>,
    pub enhanced: Vec<S>,
    pub p_overlap: S,
    /// Suppression weight after this frame.
    pub w: S,
    pub output: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    config: ModelConfig,
    pub params: ParamStore<S>,
    prenet: Lstm,
    scorer: Vec<Dense>,
    scorer_head: Option<Dense>,
    mask_lstm: Lstm,
    mask_fc: Dense,
    noise_lstm: Lstm,
    noise_fc: Dense,
    noise_head: Dense,
}

/// First scorer layer applied to each slot once per sequence.
struct ScorerPre {
    w_key: Var,
    bias: Var,
    slot_terms: Vec<Var>,
}

impl<S: Scalar> Model<S> {
    /// Builds a model with parameters drawn from the seeded init stream.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        let mut rng = rng_for(&[tag::INIT, seed]);
        Self::build(config, &mut rng)
    }

    fn build<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut p = ParamStore::new();
        let prenet = Lstm::register(&mut p, "prenet", config.feature_dim, &config.prenet, rng)?;
        let mut scorer = Vec::new();
        let mut scorer_head = None;
        if config.scorer_kind == ScorerKind::Net {
            let mut w = config.key_width() + config.embed_dim;
            for (i, &h) in config.scorer.iter().enumerate() {
                scorer.push(Dense::register(&mut p, &format!("scorer.fc.{i}"), w, h, Activation::Relu, rng)?);
                w = h;
            }
            scorer_head = Some(Dense::register(&mut p, "scorer.head", w, 1, Activation::None, rng)?);
        }
        let mask_lstm = Lstm::register(&mut p, "mask.lstm", config.feature_dim + config.embed_dim, &config.mask_lstm, rng)?;
        let mask_fc = Dense::register(&mut p, "mask.fc", mask_lstm.output_width(), config.feature_dim, Activation::Sigmoid, rng)?;
        let noise_lstm = Lstm::register(&mut p, "noise.lstm", config.feature_dim, &config.noise_lstm, rng)?;
        let noise_fc = Dense::register(&mut p, "noise.fc", noise_lstm.output_width(), config.noise_fc, Activation::Relu, rng)?;
        let noise_head = Dense::register(&mut p, "noise.head", config.noise_fc, 1, Activation::Sigmoid, rng)?;
        Ok(Self { config, params: p, prenet, scorer, scorer_head, mask_lstm, mask_fc, noise_lstm, noise_fc, noise_head })
    }

    /// Same topology with every parameter set to zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self, ConfigError> {
        let mut m = Self::new(config, 0)?;
        m.params.zero_all();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            prenet: self.prenet.clone(),
            scorer: self.scorer.clone(),
            scorer_head: self.scorer_head.clone(),
            mask_lstm: self.mask_lstm.clone(),
            mask_fc: self.mask_fc.clone(),
            noise_lstm: self.noise_lstm.clone(),
            noise_fc: self.noise_fc.clone(),
            noise_head: self.noise_head.clone(),
        }
    }

    pub fn zero_state(&self, batch: usize) -> ModelState<S> {
        ModelState {
            prenet: self.prenet.zero_state(batch),
            mask: self.mask_lstm.zero_state(batch),
            noise: self.noise_lstm.zero_state(batch),
        }
    }

    fn bind(&self, g: &mut Graph<'_, S>, st: &ModelState<S>) -> Result<StateVars, ConfigError> {
        Ok(StateVars {
            prenet: self.prenet.bind_state(g, &st.prenet)?,
            mask: self.mask_lstm.bind_state(g, &st.mask)?,
            noise: self.noise_lstm.bind_state(g, &st.noise)?,
        })
    }

    fn unbind(g: &Graph<'_, S>, v: &StateVars) -> ModelState<S> {
        ModelState { prenet: v.prenet.to_state(g), mask: v.mask.to_state(g), noise: v.noise.to_state(g) }
    }

    fn check_slots(&self, slots: &SlotBatch<S>) -> Result<(), ConfigError> {
        if slots.tensors.len() != self.config.n_max {
            return Err(ConfigError::new(format!(
                "model has {} slots, got {}",
                self.config.n_max,
                slots.tensors.len()
            )));
        }
        let d = slots.tensors[0].cols();
        if d != self.config.embed_dim {
            return Err(ConfigError::new(format!("embedding dimension {d}, model expects {}", self.config.embed_dim)));
        }
        Ok(())
    }

    fn scorer_pre(&self, g: &mut Graph<'_, S>, slots: &[Var]) -> Option<ScorerPre> {
        let first = self.scorer.first()?;
        let k = self.config.key_width();
        let w = g.param(first.w);
        let w_key = g.slice_cols(w, 0, k);
        let w_emb = g.slice_cols(w, k, self.config.embed_dim);
        let bias = g.param(first.b);
        let slot_terms = slots.iter().map(|&e| g.matmul_nt(e, w_emb)).collect();
        Some(ScorerPre { w_key, bias, slot_terms })
    }

    fn scores(&self, g: &mut Graph<'_, S>, key: Var, slots: &[Var], pre: Option<&ScorerPre>) -> Result<Var, ConfigError> {
        let mut cols = Vec::with_capacity(slots.len());
        match pre {
            Some(pre) => {
                let kt = g.matmul_nt(key, pre.w_key);
                for &term in &pre.slot_terms {
                    let h = g.add(kt, term);
                    let h = g.add_bias(h, pre.bias);
                    let mut h = g.relu(h);
                    for layer in &self.scorer[1..] {
                        h = layer.forward(g, h)?;
                    }
                    cols.push(self.scorer_head.as_ref().expect("net scorer has a head").forward(g, h)?);
                }
            }
            None => {
                for &e in slots {
                    cols.push(g.cosine_rows(key, e));
                }
            }
        }
        Ok(g.concat_cols(&cols))
    }

    /// One timestep of the whole pipeline for a batch.
    fn frame(
        &self,
        g: &mut Graph<'_, S>,
        x: Var,
        slots: &[Var],
        pre: Option<&ScorerPre>,
        st: &mut StateVars,
    ) -> Result<FrameVars, ConfigError> {
        let raw = x;
        let x = self.standardize(g, raw);
        let key = self.prenet.step(g, x, &mut st.prenet)?;
        let scores = self.scores(g, key, slots, pre)?;
        let alpha = g.softmax_rows(scores);
        let e_att = g.mix_rows(alpha, slots);
        let mask_in = g.concat_cols(&[x, e_att]);
        let h = self.mask_lstm.step(g, mask_in, &mut st.mask)?;
        let mask = self.mask_fc.forward(g, h)?;
        let enhanced = g.mul(raw, mask);
        let hn = self.noise_lstm.step(g, x, &mut st.noise)?;
        let hn = self.noise_fc.forward(g, hn)?;
        let p_overlap = self.noise_head.forward(g, hn)?;
        Ok(FrameVars { key, scores, alpha, e_att, mask, enhanced, p_overlap })
    }

    /// Runs a batch of equal-length sequences on `g` from `init`.
    pub fn run_sequence(
        &self,
        g: &mut Graph<'_, S>,
        xs: &[Tensor<S>],
        slots: &SlotBatch<S>,
        init: &ModelState<S>,
    ) -> Result<(Vec<FrameVars>, ModelState<S>), ConfigError> {
        self.check_slots(slots)?;
        let slot_vars: Vec<Var> = slots.tensors.iter().map(|t| g.constant(t.clone())).collect();
        let pre = self.scorer_pre(g, &slot_vars);
        let mut st = self.bind(g, init)?;
        let mut frames = Vec::with_capacity(xs.len());
        for x in xs {
            if x.cols() != self.config.feature_dim {
                return Err(ConfigError::new(format!(
                    "input frames have width {}, model expects {}",
                    x.cols(),
                    self.config.feature_dim
                )));
            }
            let xv = g.constant(x.clone());
            frames.push(self.frame(g, xv, &slot_vars, pre.as_ref(), &mut st)?);
        }
        Ok((frames, Self::unbind(g, &st)))
    }

    /// Builds the combined training loss of a batch on `g`.
    ///
    /// The reconstruction term sums over frames and averages over feature
    /// components and examples; the noise term is a mean over frames and
    /// examples; the attention term sums over frames and averages over examples.
    pub fn training_loss(
        &self,
        g: &mut Graph<'_, S>,
        batch: &TrainBatch<S>,
        weights: &LossWeights,
        alpha_asym: S,
    ) -> Result<LossVars, ConfigError> {
        let b = batch.slots.batch();
        let init = self.zero_state(b);
        let (frames, _) = self.run_sequence(g, &batch.xs, &batch.slots, &init)?;
        let e_tar = g.constant(batch.e_tar.clone());
        let (mut asym, mut noise, mut att) = (Vec::new(), Vec::new(), Vec::new());
        for (t, f) in frames.iter().enumerate() {
            let clean = g.constant(batch.clean[t].clone());
            let labels = g.constant(batch.labels[t].clone());
            asym.push(g.asym_sq(f.enhanced, clean, alpha_asym));
            noise.push(g.bce(f.p_overlap, labels));
            att.push(g.sq_dist(f.e_att, e_tar));
        }
        let sum = |g: &mut Graph<'_, S>, v: &[Var]| {
            let mut acc = v[0];
            for &x in &v[1..] {
                acc = g.add(acc, x);
            }
            acc
        };
        if frames.is_empty() {
            return Err(ConfigError::new("training batch has no frames"));
        }
        let c = |v: f64| S::from_f64_lossy(v);
        let asym_s = sum(g, &asym);
        let asym = g.scale(asym_s, c(1.0 / (self.config.feature_dim * b) as f64));
        let noise_s = sum(g, &noise);
        let noise = g.scale(noise_s, c(1.0 / (frames.len() * b) as f64));
        let att_s = sum(g, &att);
        let att = g.scale(att_s, c(1.0 / b as f64));
        let ta = g.scale(asym, c(weights.asym));
        let tn = g.scale(noise, c(weights.noise));
        let tt = g.scale(att, c(weights.att));
        let total = g.add(ta, tn);
        let total = g.add(total, tt);
        Ok(LossVars { asym, noise, att, total })
    }

    fn collect_outputs(
        &self,
        g: &Graph<'_, S>,
        frames: &[FrameVars],
        xs: &[Tensor<S>],
        slots: &SlotBatch<S>,
        beta: S,
        w0: &[S],
    ) -> Vec<Vec<FrameOutput<S>>> {
        let b = slots.batch();
        let mut out: Vec<Vec<FrameOutput<S>>> = (0..b).map(|_| Vec::with_capacity(frames.len())).collect();
        let mut w = w0.to_vec();
        for (t, f) in frames.iter().enumerate() {
            for (r, seq) in out.iter_mut().enumerate() {
                let p = g.value(f.p_overlap).row_slice(r)[0];
                w[r] = beta * w[r] + (S::one() - beta) * p;
                let x = xs[t].row_slice(r);
                let enhanced = g.value(f.enhanced).row_slice(r).to_vec();
                let output = x.iter().zip(&enhanced).map(|(&a, &e)| w[r] * e + (S::one() - w[r]) * a).collect();
                seq.push(FrameOutput {
                    key: g.value(f.key).row_slice(r).to_vec(),
                    alpha: slots.restore(r, g.value(f.alpha).row_slice(r)),
                    e_att: g.value(f.e_att).row_slice(r).to_vec(),
                    mask: g.value(f.mask).row_slice(r).to_vec(),
                    enhanced,
                    p_overlap: p,
                    w: w[r],
                    output,
                });
            }
        }
        out
    }

    /// Whole-sequence inference over a batch of equal-length inputs, with
    /// runtime suppression starting from `w = 0`.
    pub fn infer_batch(
        &self,
        mixtures: &[&[FeatureFrame]],
        slots: &[&SlotList],
        beta: S,
    ) -> Result<Vec<Vec<FrameOutput<S>>>, Error> {
        if mixtures.len() != slots.len() {
            return Err(UsageError::new("one slot list per input sequence").into());
        }
        let xs: Vec<Tensor<S>> = time_major(mixtures)?;
        let sb = SlotBatch::new(slots)?;
        let mut g = Graph::inference(&self.params);
        let (frames, _) = self.run_sequence(&mut g, &xs, &sb, &self.zero_state(mixtures.len()))?;
        Ok(self.collect_outputs(&g, &frames, &xs, &sb, beta, &vec![S::zero(); mixtures.len()]))
    }

    fn standardize(&self, g: &mut Graph<'_, S>, x: Var) -> Var {
        let center = g.constant(Tensor::row(vec![S::from_f32(-self.config.input_center).unwrap(); self.config.feature_dim]));
        let x = g.add_bias(x, center);
        g.scale(x, S::from_f32(self.config.input_scale).unwrap())
    }

    /// PreNet keys of a single sequence, continuing from `state`.
    pub fn prenet_forward(&self, x: &[FeatureFrame], state: &LstmState<S>) -> Result<(Vec<Vec<S>>, LstmState<S>), ConfigError> {
        let mut g = Graph::inference(&self.params);
        let mut st = self.prenet.bind_state(&mut g, state)?;
        let mut keys = Vec::with_capacity(x.len());
        for f in x {
            let xv = g.constant(frames_at(&[std::slice::from_ref(f)], 0));
            let xv = self.standardize(&mut g, xv);
            let k = self.prenet.step(&mut g, xv, &mut st)?;
            keys.push(g.value(k).data().to_vec());
        }
        Ok((keys, st.to_state(&g)))
    }

    /// Scorer output for one key and one embedding, evaluated on the
    /// explicit concatenation `[key ‖ e]`.
    pub fn score(&self, key: &[S], e: &[S]) -> Result<S, ConfigError> {
        let mut g = Graph::inference(&self.params);
        let kv = g.constant(Tensor::row(key.to_vec()));
        let ev = g.constant(Tensor::row(e.to_vec()));
        match self.config.scorer_kind {
            ScorerKind::Cosine => {
                let s = g.cosine_rows(kv, ev);
                Ok(g.value(s).data()[0])
            }
            ScorerKind::Net => {
                let mut h = g.concat_cols(&[kv, ev]);
                for layer in &self.scorer {
                    h = layer.forward(&mut g, h)?;
                }
                let s = self.scorer_head.as_ref().expect("net scorer has a head").forward(&mut g, h)?;
                Ok(g.value(s).data()[0])
            }
        }
    }

    /// Mask network on a single sequence with externally supplied `e_att`.
    pub fn mask_forward(
        &self,
        x: &[FeatureFrame],
        e_att: &[Vec<S>],
        state: &LstmState<S>,
    ) -> Result<(Vec<Vec<S>>, LstmState<S>), Error> {
        if x.len() != e_att.len() {
            return Err(UsageError::new(format!("{} frames but {} attentive embeddings", x.len(), e_att.len())).into());
        }
        let mut g = Graph::inference(&self.params);
        let mut st = self.mask_lstm.bind_state(&mut g, state)?;
        let mut masks = Vec::with_capacity(x.len());
        for (f, e) in x.iter().zip(e_att) {
            let xv = g.constant(frames_at(&[std::slice::from_ref(f)], 0));
            let xv = self.standardize(&mut g, xv);
            let ev = g.constant(Tensor::row(e.clone()));
            let inp = g.concat_cols(&[xv, ev]);
            let h = self.mask_lstm.step(&mut g, inp, &mut st)?;
            let m = self.mask_fc.forward(&mut g, h)?;
            masks.push(g.value(m).data().to_vec());
        }
        Ok((masks, st.to_state(&g)))
    }

    /// Overlap posteriors of a single sequence.
    pub fn noise_forward(&self, x: &[FeatureFrame], state: &LstmState<S>) -> Result<(Vec<S>, LstmState<S>), ConfigError> {
        let mut g = Graph::inference(&self.params);
        let mut st = self.noise_lstm.bind_state(&mut g, state)?;
        let mut ps = Vec::with_capacity(x.len());
        for f in x {
            let xv = g.constant(frames_at(&[std::slice::from_ref(f)], 0));
            let xv = self.standardize(&mut g, xv);
            let h = self.noise_lstm.step(&mut g, xv, &mut st)?;
            let h = self.noise_fc.forward(&mut g, h)?;
            let p = self.noise_head.forward(&mut g, h)?;
            ps.push(g.value(p).data()[0]);
        }
        Ok((ps, st.to_state(&g)))
    }

    /// Opens a frame-by-frame session over `slots`.
    pub fn stream(&self, slots: &SlotList, beta: S) -> Result<StreamSession<'_, S>, ConfigError> {
        let sb = SlotBatch::new(&[slots])?;
        self.check_slots(&sb)?;
        if !(S::zero()..S::one()).contains(&beta) {
            return Err(ConfigError::new(format!("suppression memory β must lie in [0, 1), got {beta}")));
        }
        Ok(StreamSession { model: self, slots: sb, state: self.zero_state(1), w: S::zero(), beta, closed: false })
    }
}

impl Model<f32> {
    pub fn to_checkpoint(&self) -> Vec<u8> {
        save_checkpoint(&self.config.echo(), &self.params)
    }

    /// Loads a checkpoint, optionally requiring it to match `expected`.
    pub fn from_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self, CheckpointError> {
        let ck = load_checkpoint(bytes)?;
        let config = ModelConfig::from_echo(&ck.config)?;
        if let Some(want) = expected {
            if want != &config {
                return Err(CheckpointError::ConfigConflict(format!(
                    "checkpoint topology {:?} differs from requested {:?}",
                    config.echo(),
                    want.echo()
                )));
            }
        }
        let mut model = Self::new(config, 0).map_err(|e| CheckpointError::ConfigConflict(e.message))?;
        if model.params.len() != ck.params.len() {
            return Err(CheckpointError::ConfigConflict(format!(
                "checkpoint holds {} tensors, topology needs {}",
                ck.params.len(),
                model.params.len()
            )));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = ck
                .params
                .id(&name)
                .map(|i| ck.params.get(i))
                .ok_or_else(|| CheckpointError::ConfigConflict(format!("missing tensor `{name}`")))?;
            let dst = model.params.get_mut(id);
            if src.shape() != dst.shape() {
                return Err(CheckpointError::ConfigConflict(format!(
                    "tensor `{name}` has shape {:?}, topology needs {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }
}

/// Frame-by-frame inference over one input stream. Owns its recurrent
/// state and suppression memory; the model is shared read-only.
pub struct StreamSession<'m, S: Scalar> {
    model: &'m Model<S>,
    slots: SlotBatch<S>,
    state: ModelState<S>,
    w: S,
    beta: S,
    closed: bool,
}

impl<S: Scalar> StreamSession<'_, S> {
    pub fn push_frame(&mut self, x: &FeatureFrame) -> Result<FrameOutput<S>, Error> {
        if self.closed {
            return Err(UsageError::new("push_frame on a closed session").into());
        }
        let xs = vec![frames_at::<S>(&[std::slice::from_ref(x)], 0)];
        let mut g = Graph::inference(&self.model.params);
        let (frames, state) = self.model.run_sequence(&mut g, &xs, &self.slots, &self.state)?;
        let out = self.model.collect_outputs(&g, &frames, &xs, &self.slots, self.beta, &[self.w]);
        let frame = out.into_iter().next().and_then(|mut v| v.pop()).expect("one frame");
        self.state = state;
        self.w = frame.w;
        Ok(frame)
    }

    pub fn state(&self) -> &ModelState<S> {
        &self.state
    }

    pub fn suppression(&self) -> S {
        self.w
    }

    pub fn close(&mut self) {
        self.closed = true;
    }
}
