//! Training loop: seeded batches from the synthetic sampler, the combined
//! loss, global-norm clipping and Adam, with per-step logging and best/final
//! checkpoints.

use crate::error::{ConfigError, Error, NumericError};
use crate::model::{LossValues, Model, ModelConfig, TrainBatch};
use crate::nn::{AdamConfig, AdamState, Graph};
use crate::separator::LossWeights;
use crate::speaker::Corpus;
use crate::synth::{sample_training_example, SamplerConfig, TrainingExample};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub corpus_key: u64,
    pub weights: LossWeights,
    pub alpha_asym: f64,
    pub adam: AdamConfig,
    pub clip: f64,
    /// Learning rate at the last step as a fraction of `adam.lr`; the rate
    /// follows a half cosine in between. 1 keeps it constant.
    pub lr_final: f64,
    pub sampler: SamplerConfig,
    /// Steps between validation passes that decide the best checkpoint.
    pub validate_every: usize,
    pub validation_size: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        let sampler = SamplerConfig::new(model.n_max);
        Self {
            model,
            steps: 2000,
            batch: 16,
            seed: 1,
            corpus_key: 1,
            weights: LossWeights::default(),
            alpha_asym: 2.0,
            adam: AdamConfig::default(),
            clip: 5.0,
            lr_final: 1.0,
            sampler,
            validate_every: 250,
            validation_size: 32,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.batch == 0 {
            return Err(ConfigError::new("batch size must be positive"));
        }
        if !(self.alpha_asym >= 1.0) {
            return Err(ConfigError::new(format!("asymmetry factor must be ≥ 1, got {}", self.alpha_asym)));
        }
        if !(self.adam.lr > 0.0) || !(self.clip > 0.0) {
            return Err(ConfigError::new("learning rate and clip norm must be positive"));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= 1.0) {
            return Err(ConfigError::new(format!("final learning-rate fraction must be in (0, 1], got {}", self.lr_final)));
        }
        if self.sampler.n_max != self.model.n_max {
            return Err(ConfigError::new("sampler and model disagree on the slot count"));
        }
        Ok(())
    }

    pub fn corpus(&self) -> Corpus {
        Corpus::new(self.corpus_key, self.model.embed_dim)
    }

    /// Learning rate used for update number `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 || self.lr_final == 1.0 {
            return self.adam.lr;
        }
        let progress = (step.min(self.steps - 1)) as f64 / (self.steps - 1) as f64;
        let fraction = self.lr_final + (1.0 - self.lr_final) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.adam.lr * fraction
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossValues,
    pub grad_norm: f64,
}

pub const LOG_HEADER: &str = "step\tL_asym\tL_noise\tL_att\ttotal";

impl StepLog {
    pub fn tsv(&self) -> String {
        format!("{}\t{}\t{}\t{}\t{}", self.step, self.loss.asym, self.loss.noise, self.loss.att, self.loss.total)
    }
}

/// Stream index reserved for validation examples.
const VALIDATION_STREAM: u64 = u64::MAX;

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    adam: AdamState<f32>,
    corpus: Corpus,
    step: usize,
    validation: Vec<TrainingExample>,
    best: Option<(f64, Vec<u8>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, Error> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        let adam = AdamState::new(&model.params, config.adam);
        let corpus = config.corpus();
        let validation = (0..config.validation_size as u64)
            .map(|i| sample_training_example(&config.sampler, &corpus, config.seed ^ VALIDATION_STREAM, i))
            .collect::<Result<_, _>>()?;
        Ok(Self { config, model, adam, corpus, step: 0, validation, best: None })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn batch_examples(&self, step: usize) -> Result<Vec<TrainingExample>, Error> {
        let b = self.config.batch as u64;
        (0..b)
            .map(|i| sample_training_example(&self.config.sampler, &self.corpus, self.config.seed, step as u64 * b + i))
            .collect::<Result<_, _>>()
            .map_err(Error::from)
    }

    /// Loss of a batch under the current parameters, without updating them.
    pub fn evaluate(&self, examples: &[TrainingExample]) -> Result<LossValues, Error> {
        let batch = TrainBatch::from_examples(examples)?;
        let mut g = Graph::inference(&self.model.params);
        let loss = self.model.training_loss(&mut g, &batch, &self.config.weights, self.config.alpha_asym as f32)?;
        Ok(loss.values(&g))
    }

    pub fn validation_loss(&self) -> Result<f64, Error> {
        if self.validation.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(self.evaluate(&self.validation)?.total)
    }

    /// One optimizer update on the next batch of the seeded stream.
    pub fn step(&mut self) -> Result<StepLog, Error> {
        let examples = self.batch_examples(self.step)?;
        let batch = TrainBatch::from_examples(&examples)?;
        let (loss, mut grads) = {
            let mut g = Graph::new(&self.model.params);
            let lv = self.model.training_loss(&mut g, &batch, &self.config.weights, self.config.alpha_asym as f32)?;
            let loss = lv.values(&g);
            if !loss.total.is_finite() {
                return Err(NumericError::NonFiniteLoss { step: self.step, detail: format!("{loss:?}") }.into());
            }
            (loss, g.backward(lv.total)?)
        };
        let grad_norm = grads.clip_global_norm(self.config.clip as f32) as f64;
        self.adam.config.lr = self.config.lr_at(self.step);
        self.adam.step(&mut self.model.params, &grads)?;
        let log = StepLog { step: self.step, loss, grad_norm };
        self.step += 1;
        Ok(log)
    }

    fn consider_best(&mut self) -> Result<(), Error> {
        let v = self.validation_loss()?;
        if v.is_finite() && self.best.as_ref().is_none_or(|(b, _)| v < *b) {
            self.best = Some((v, self.model.to_checkpoint()));
        }
        Ok(())
    }

    /// Runs the configured number of steps, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<TrainOutcome, Error> {
        if self.step == 0 {
            self.consider_best()?;
        }
        while self.step < self.config.steps {
            let log = self.step()?;
            on_step(&log);
            if self.config.validate_every > 0 && self.step % self.config.validate_every == 0 {
                self.consider_best()?;
            }
        }
        self.consider_best()?;
        let (best_loss, best) = self.best.clone().expect("validated at least once");
        Ok(TrainOutcome { final_checkpoint: self.model.to_checkpoint(), best_checkpoint: best, best_validation: best_loss })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_checkpoint: Vec<u8>,
    pub best_checkpoint: Vec<u8>,
    pub best_validation: f64,
}
