//! Synthetic mixture corpus.
//!
//! Clean speech is simulated directly at the LFBE energy level: every 10 ms
//! frame is `profile ⊙ excitation`, where the excitation combines a voicing
//! chain (speech / silence runs), a shared loudness AR(1) envelope and an
//! independent AR(1) jitter per mel band. Interference is another synthetic
//! talker or a stationary coloured noise, scaled to a requested SNR over the
//! whole utterance and added in the linear energy domain before the log.
//! Stacking and subsampling reuse the feature frontend.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::SynthError;
use crate::frontend::{lfbe_frames_for, stack_subsample, FeatureFrame, LfbeFrame, LOG_FLOOR, NUM_MELS, STACK, SUBSAMPLE};
use crate::rng::{derive_seed, rng_for, tag};
use crate::speaker::{pad_slots, Corpus, DVector, SlotList, SynthSpeaker};

/// Generator constants shared by every example of a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    /// Standard deviation of `A·e` entries for a unit identity.
    pub profile_spread: f64,
    /// Overall energy scale; keeps log features mostly positive.
    pub gain: f64,
    /// Excitation level of silent frames relative to speech.
    pub silence_level: f64,
    pub p_speech_to_silence: f64,
    pub p_silence_to_speech: f64,
    pub loudness_rho: f64,
    pub loudness_sigma: f64,
    pub band_rho: f64,
    pub band_sigma: f64,
    /// Per-band random-walk step of the stationary noise spectrum.
    pub noise_shape_step: f64,
    pub noise_jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            profile_spread: 1.5,
            gain: 6f64.exp(),
            silence_level: 0.02,
            p_speech_to_silence: 1.0 / 60.0,
            p_silence_to_speech: 1.0 / 15.0,
            loudness_rho: 0.9,
            loudness_sigma: 0.5,
            band_rho: 0.5,
            band_sigma: 0.25,
            noise_shape_step: 0.3,
            noise_jitter: 0.1,
        }
    }
}

impl SynthParams {
    /// Stationary probability of a voiced frame.
    pub fn speech_fraction(&self) -> f64 {
        self.p_silence_to_speech / (self.p_silence_to_speech + self.p_speech_to_silence)
    }

    /// Expected excitation per frame and band.
    pub fn mean_excitation(&self) -> f64 {
        let s = self.speech_fraction();
        self.gain * (s + (1.0 - s) * self.silence_level)
    }
}

/// Linear energies, one 128-band row per 10 ms frame.
pub type EnergySeq = Vec<Vec<f64>>;

/// Clean utterance energies plus the voicing decision of every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanUtterance {
    pub energies: EnergySeq,
    pub voiced: Vec<bool>,
}

struct Ar1 {
    rho: f64,
    innovation: f64,
    state: f64,
}

impl Ar1 {
    fn new(rho: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Self {
        let state = sigma * rng.sample::<f64, _>(StandardNormal);
        Self { rho, innovation: sigma * (1.0 - rho * rho).sqrt(), state }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let v = self.state;
        self.state = self.rho * self.state + self.innovation * rng.sample::<f64, _>(StandardNormal);
        v
    }
}

/// Simulates `length` LFBE-rate frames of `speaker`.
pub fn gen_clean(speaker: &SynthSpeaker, length: usize, seed: u64, params: &SynthParams) -> CleanUtterance {
    let mut rng = rng_for(&[tag::CLEAN, speaker.seed, seed]);
    let mut voiced_now = rng.gen_bool(params.speech_fraction());
    let mut loud = Ar1::new(params.loudness_rho, params.loudness_sigma, &mut rng);
    let mut bands: Vec<Ar1> = (0..NUM_MELS).map(|_| Ar1::new(params.band_rho, params.band_sigma, &mut rng)).collect();
    let speech_bias = -(params.loudness_sigma.powi(2) + params.band_sigma.powi(2)) / 2.0;
    let silence_bias = -params.band_sigma.powi(2) / 2.0;
    let mut energies = Vec::with_capacity(length);
    let mut voiced = Vec::with_capacity(length);
    for _ in 0..length {
        let l = loud.next(&mut rng);
        let row = speaker
            .profile
            .iter()
            .zip(bands.iter_mut())
            .map(|(&p, u)| {
                let u = u.next(&mut rng);
                let exc = if voiced_now {
                    params.gain * (l + u + speech_bias).exp()
                } else {
                    params.gain * params.silence_level * (u + silence_bias).exp()
                };
                p * exc
            })
            .collect();
        energies.push(row);
        voiced.push(voiced_now);
        let flip = if voiced_now { params.p_speech_to_silence } else { params.p_silence_to_speech };
        if rng.gen_bool(flip) {
            voiced_now = !voiced_now;
        }
    }
    CleanUtterance { energies, voiced }
}

/// Stationary coloured noise with a smooth random spectral shape.
pub fn gen_nonspeech(length: usize, seed: u64, params: &SynthParams) -> EnergySeq {
    let mut rng = rng_for(&[tag::NOISE, seed]);
    let mut level = 0.0;
    let shape: Vec<f64> = (0..NUM_MELS)
        .map(|_| {
            level += params.noise_shape_step * rng.sample::<f64, _>(StandardNormal);
            level
        })
        .collect();
    let mean = shape.iter().sum::<f64>() / NUM_MELS as f64;
    let shape: Vec<f64> = shape.iter().map(|s| params.gain * (s - mean).exp()).collect();
    (0..length)
        .map(|_| {
            shape
                .iter()
                .map(|&s| s * (params.noise_jitter * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect()
        })
        .collect()
}

fn total(seq: &EnergySeq) -> f64 {
    seq.iter().flatten().sum()
}

/// Scale applied to `noise` so the target-to-noise energy ratio is `snr_db`.
/// An infinite SNR means no interference and yields scale 0.
pub fn snr_scale(target: &EnergySeq, noise: &EnergySeq, snr_db: f64) -> Result<f64, SynthError> {
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if !snr_db.is_finite() {
        return Err(SynthError::InvalidSpec(format!("SNR {snr_db} dB")));
    }
    let et = total(target);
    if et <= 0.0 {
        return Err(SynthError::ZeroEnergyTarget);
    }
    let en = total(noise);
    if en <= 0.0 {
        return Err(SynthError::ZeroEnergyNoise(snr_db));
    }
    Ok(et / (en * 10f64.powf(snr_db / 10.0)))
}

/// `target + c·noise` with `c` from [`snr_scale`].
pub fn mix_at_snr(target: &EnergySeq, noise: &EnergySeq, snr_db: f64) -> Result<EnergySeq, SynthError> {
    if target.len() != noise.len() {
        return Err(SynthError::InvalidSpec(format!("length {} vs {}", target.len(), noise.len())));
    }
    let c = snr_scale(target, noise, snr_db)?;
    if c == 0.0 {
        return Ok(target.clone());
    }
    Ok(target
        .iter()
        .zip(noise)
        .map(|(t, n)| t.iter().zip(n).map(|(&a, &b)| a + c * b).collect())
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InterfererKind {
    /// Another enrolled speaker talks over the target.
    EnrolledOther,
    /// A speaker who is not enrolled.
    GuestSpeech,
    NonspeechNoise,
    None,
}

impl InterfererKind {
    pub fn is_speech(self) -> bool {
        matches!(self, Self::EnrolledOther | Self::GuestSpeech)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::EnrolledOther => "enrolled-other",
            Self::GuestSpeech => "guest-speech",
            Self::NonspeechNoise => "nonspeech-noise",
            Self::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::EnrolledOther, Self::GuestSpeech, Self::NonspeechNoise, Self::None].into_iter().find(|k| k.name() == s)
    }
}

/// Everything needed to regenerate one example.
///
/// The enrolled non-target speakers, the guest and the noise are all derived
/// from `example_seed`, and the target's slot position from
/// `(example_seed, active)`. Raising `active` therefore adds silent enrolled
/// users without changing the audio.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub target_seed: u64,
    pub interferer: InterfererKind,
    pub snr_db: f64,
    /// Output frames (30 ms).
    pub length: usize,
    pub active: usize,
    pub example_seed: u64,
}

pub const MIN_LENGTH: usize = 8;

impl MixtureSpec {
    pub fn validate(&self, n_max: usize) -> Result<(), SynthError> {
        if self.length < MIN_LENGTH {
            return Err(SynthError::InvalidSpec(format!("length {} below {MIN_LENGTH}", self.length)));
        }
        if self.active == 0 || self.active > n_max {
            return Err(SynthError::InvalidSpec(format!("active count {} outside 1..={n_max}", self.active)));
        }
        if self.interferer == InterfererKind::EnrolledOther && self.active < 2 {
            return Err(SynthError::InvalidSpec("enrolled-other interference needs two active users".into()));
        }
        if self.snr_db.is_nan() || (self.snr_db.is_infinite() && self.interferer != InterfererKind::None) {
            return Err(SynthError::InvalidSpec(format!("SNR {} dB", self.snr_db)));
        }
        Ok(())
    }

    /// Seed of the `i`-th enrolled non-target speaker.
    pub fn other_seed(&self, i: usize) -> u64 {
        derive_seed(&[tag::ENROLL, self.example_seed, i as u64]) | 1 << 63
    }

    pub fn guest_seed(&self) -> u64 {
        derive_seed(&[tag::GUEST, self.example_seed]) | 1 << 62
    }

    /// Slot index of the target among the active users.
    pub fn target_slot(&self) -> usize {
        (derive_seed(&[tag::EXAMPLE, self.example_seed, self.active as u64]) % self.active as u64) as usize
    }

    /// Tab-separated manifest fields (without the example id).
    pub fn manifest_fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.target_seed,
            self.interferer.name(),
            self.snr_db,
            self.length,
            self.active,
            self.example_seed
        )
    }
}

/// Pre-log energies of an example, kept for metrics and invariants.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureEnergies {
    pub target: EnergySeq,
    /// Interference after SNR scaling (all zero for `None`).
    pub interference: EnergySeq,
    pub mixture: EnergySeq,
    pub voiced: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub mixture: Vec<FeatureFrame>,
    pub clean: Vec<FeatureFrame>,
    pub slots: SlotList,
    pub target_index: usize,
    /// 1 where interfering speech exceeds 1% of the target energy.
    pub labels: Vec<u8>,
    /// Frames where the target is voiced in at least half of the stacked sub-frames.
    pub target_speech: Vec<bool>,
    /// Speaker in the mixture besides the target, if any.
    pub interferer_identity: Option<DVector>,
}

/// Overlap threshold of the frame labelling rule.
pub const OVERLAP_RATIO: f64 = 0.01;

pub fn gen_energies(spec: &MixtureSpec, corpus: &Corpus) -> Result<MixtureEnergies, SynthError> {
    let frames = lfbe_frames_for(spec.length);
    let p = &corpus.synth;
    let target = gen_clean(&corpus.make_speaker(spec.target_seed), frames, spec.example_seed, p);
    let noise = match spec.interferer {
        InterfererKind::None => None,
        InterfererKind::EnrolledOther => Some(gen_clean(&corpus.make_speaker(spec.other_seed(0)), frames, spec.example_seed, p).energies),
        InterfererKind::GuestSpeech => Some(gen_clean(&corpus.make_speaker(spec.guest_seed()), frames, spec.example_seed, p).energies),
        InterfererKind::NonspeechNoise => Some(gen_nonspeech(frames, spec.example_seed, p)),
    };
    let (interference, mixture) = match noise {
        None => (vec![vec![0.0; NUM_MELS]; frames], target.energies.clone()),
        Some(n) => {
            let c = snr_scale(&target.energies, &n, spec.snr_db)?;
            let scaled: EnergySeq = n.iter().map(|r| r.iter().map(|&v| c * v).collect()).collect();
            let mixture = target
                .energies
                .iter()
                .zip(&scaled)
                .map(|(t, s)| t.iter().zip(s).map(|(&a, &b)| a + b).collect())
                .collect();
            (scaled, mixture)
        }
    };
    Ok(MixtureEnergies { target: target.energies, interference, mixture, voiced: target.voiced })
}

/// Natural-log features with the frontend floor, stacked and subsampled.
pub fn energies_to_features(seq: &EnergySeq) -> Vec<FeatureFrame> {
    let lfbe: Vec<LfbeFrame> = seq
        .iter()
        .map(|r| LfbeFrame(r.iter().map(|&e| e.max(LOG_FLOOR).ln() as f32).collect()))
        .collect();
    stack_subsample(&lfbe)
}

pub fn gen_example(spec: &MixtureSpec, corpus: &Corpus, n_max: usize) -> Result<TrainingExample, SynthError> {
    spec.validate(n_max)?;
    let e = gen_energies(spec, corpus)?;
    let target_id = corpus.make_speaker(spec.target_seed).identity;
    let mut active: Vec<DVector> = (1..spec.active).map(|i| corpus.make_speaker(spec.other_seed(i - 1)).identity).collect();
    let target_index = spec.target_slot();
    active.insert(target_index, target_id);
    let slots = pad_slots(&active, n_max).map_err(|err| SynthError::InvalidSpec(err.to_string()))?;

    let n = spec.length;
    let speech = spec.interferer.is_speech();
    let mut labels = Vec::with_capacity(n);
    let mut target_speech = Vec::with_capacity(n);
    for k in 0..n {
        let span = SUBSAMPLE * k..SUBSAMPLE * k + STACK;
        let t: f64 = e.target[span.clone()].iter().flatten().sum();
        let i: f64 = e.interference[span.clone()].iter().flatten().sum();
        labels.push(u8::from(speech && i > OVERLAP_RATIO * t));
        target_speech.push(e.voiced[span].iter().filter(|&&v| v).count() * 2 >= STACK);
    }
    let interferer_identity = match spec.interferer {
        InterfererKind::EnrolledOther => Some(corpus.make_speaker(spec.other_seed(0)).identity),
        InterfererKind::GuestSpeech => Some(corpus.make_speaker(spec.guest_seed()).identity),
        _ => None,
    };
    Ok(TrainingExample {
        mixture: energies_to_features(&e.mixture),
        clean: energies_to_features(&e.target),
        slots,
        target_index,
        labels,
        target_speech,
        interferer_identity,
    })
}

/// Distribution of training examples.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_max: usize,
    pub length: usize,
    pub snr_range: (f64, f64),
    /// Relative frequencies of enrolled-other, guest-speech, nonspeech, none.
    pub kind_weights: [f64; 4],
    /// Probability of blanking each non-target slot.
    pub zero_replace: f64,
}

impl SamplerConfig {
    pub fn new(n_max: usize) -> Self {
        Self { n_max, length: 40, snr_range: (1.0, 10.0), kind_weights: [0.2, 0.45, 0.2, 0.15], zero_replace: 0.2 }
    }
}

/// Draws the `index`-th training example of a seeded stream. Speakers come
/// from the training half of the seed space; evaluation uses the other half.
pub fn sample_training_example(
    cfg: &SamplerConfig,
    corpus: &Corpus,
    seed: u64,
    index: u64,
) -> Result<TrainingExample, SynthError> {
    sample_training_pair(cfg, corpus, seed, index).map(|(_, ex)| ex)
}

/// Like [`sample_training_example`], also returning the drawn spec (before
/// zero replacement).
pub fn sample_training_pair(
    cfg: &SamplerConfig,
    corpus: &Corpus,
    seed: u64,
    index: u64,
) -> Result<(MixtureSpec, TrainingExample), SynthError> {
    let mut rng = rng_for(&[tag::TRAIN, seed, index]);
    let active = rng.gen_range(1..=cfg.n_max);
    let weights: Vec<f64> = cfg
        .kind_weights
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == 0 && active < 2 { 0.0 } else { w })
        .collect();
    let dist = rand::distributions::WeightedIndex::new(&weights)
        .map_err(|e| SynthError::InvalidSpec(format!("kind weights: {e}")))?;
    let kind = [InterfererKind::EnrolledOther, InterfererKind::GuestSpeech, InterfererKind::NonspeechNoise, InterfererKind::None]
        [rng.sample(&dist)];
    let snr_db = if kind == InterfererKind::None { f64::INFINITY } else { rng.gen_range(cfg.snr_range.0..=cfg.snr_range.1) };
    let spec = MixtureSpec {
        target_seed: train_speaker_seed(rng.gen()),
        interferer: kind,
        snr_db,
        length: cfg.length,
        active,
        example_seed: rng.gen::<u64>() >> 1,
    };
    let mut ex = gen_example(&spec, corpus, cfg.n_max)?;
    if cfg.zero_replace > 0.0 && active > 1 {
        // the enrolled interferer keeps its slot so the overlap stays attributable
        let keep_other = kind == InterfererKind::EnrolledOther;
        let other_id = ex.interferer_identity.clone();
        let mut kept = Vec::with_capacity(active);
        let mut target_index = 0;
        for (i, e) in ex.slots.active().iter().enumerate() {
            let protected = i == ex.target_index || (keep_other && other_id.as_ref() == Some(e));
            if protected || !rng.gen_bool(cfg.zero_replace) {
                if i == ex.target_index {
                    target_index = kept.len();
                }
                kept.push(e.clone());
            }
        }
        ex.slots = pad_slots(&kept, cfg.n_max).map_err(|err| SynthError::InvalidSpec(err.to_string()))?;
        ex.target_index = target_index;
    }
    Ok((spec, ex))
}

/// Training speaker seeds stay below `2^61`, evaluation seeds at or above it.
pub fn train_speaker_seed(raw: u64) -> u64 {
    raw >> 3
}

pub fn eval_speaker_seed(index: u64) -> u64 {
    (1 << 61) | index
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn clean_is_deterministic_nonnegative_and_profile_shaped() {
        let c = Corpus::new(5, 64);
        let s = c.make_speaker(9);
        let a = gen_clean(&s, 400, 1, &c.synth);
        assert_eq!(a, gen_clean(&s, 400, 1, &c.synth));
        assert!(a.energies.iter().flatten().all(|&e| e >= 0.0));
        let mean: Vec<f64> = (0..NUM_MELS).map(|b| a.energies.iter().map(|r| r[b]).sum::<f64>() / 400.0).collect();
        let r = pearson(&mean, &s.profile);
        assert!(r > 0.8, "r = {r}");
        let silent = a.voiced.iter().filter(|v| !**v).count() as f64 / 400.0;
        assert!((0.05..0.45).contains(&silent), "silence fraction {silent}");
    }

    #[test]
    fn snr_scaling_cases() {
        let t = vec![vec![2.0, 2.0], vec![1.0, 3.0]];
        let n = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m0 = mix_at_snr(&t, &n, 0.0).unwrap();
        let scaled0: f64 = m0.iter().flatten().sum::<f64>() - 8.0;
        assert!((scaled0 - 8.0).abs() < 1e-12);
        let m10 = mix_at_snr(&t, &n, 10.0).unwrap();
        let scaled10: f64 = m10.iter().flatten().sum::<f64>() - 8.0;
        assert!((scaled10 - 0.8).abs() < 1e-12);
        assert_eq!(mix_at_snr(&t, &n, f64::INFINITY).unwrap(), t);
        let z = vec![vec![0.0, 0.0]; 2];
        assert_eq!(mix_at_snr(&t, &z, 5.0), Err(SynthError::ZeroEnergyNoise(5.0)));
    }

    fn spec(kind: InterfererKind, snr: f64) -> MixtureSpec {
        MixtureSpec { target_seed: 3, interferer: kind, snr_db: snr, length: 30, active: 2, example_seed: 17 }
    }

    #[test]
    fn no_interferer_means_clean_mixture() {
        let c = Corpus::new(2, 32);
        let ex = gen_example(&spec(InterfererKind::None, f64::INFINITY), &c, 4).unwrap();
        assert!(ex.labels.iter().all(|&l| l == 0));
        assert_eq!(ex.clean, ex.mixture);
        assert_eq!(ex.mixture.len(), 30);
    }

    #[test]
    fn guest_at_low_snr_labels_overlap() {
        let c = Corpus::new(2, 32);
        let ex = gen_example(&spec(InterfererKind::GuestSpeech, 1.0), &c, 4).unwrap();
        assert!(ex.labels.iter().any(|&l| l == 1));
        assert_eq!(ex, gen_example(&spec(InterfererKind::GuestSpeech, 1.0), &c, 4).unwrap());
        assert_eq!(ex.slots.active()[ex.target_index], c.make_speaker(3).identity);
    }

    #[test]
    fn labels_follow_the_energy_rule() {
        let c = Corpus::new(4, 32);
        for kind in [InterfererKind::GuestSpeech, InterfererKind::EnrolledOther, InterfererKind::NonspeechNoise] {
            let s = spec(kind, 4.0);
            let e = gen_energies(&s, &c).unwrap();
            let ex = gen_example(&s, &c, 4).unwrap();
            for (k, &l) in ex.labels.iter().enumerate() {
                let span = 3 * k..3 * k + 4;
                let t: f64 = e.target[span.clone()].iter().flatten().sum();
                let i: f64 = e.interference[span].iter().flatten().sum();
                if l == 0 && kind.is_speech() {
                    assert!(i <= 0.01 * t);
                }
            }
            for ((m, t), i) in e.mixture.iter().flatten().zip(e.target.iter().flatten()).zip(e.interference.iter().flatten()) {
                assert!((m - t - i).abs() <= 1e-12 * m.abs().max(1.0));
            }
        }
    }

    #[test]
    fn more_users_do_not_change_the_audio() {
        let c = Corpus::new(4, 32);
        let mut s = spec(InterfererKind::GuestSpeech, 3.0);
        let a = gen_example(&s, &c, 4).unwrap();
        s.active = 4;
        let b = gen_example(&s, &c, 4).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(b.slots.active_count(), 4);
    }

    #[test]
    fn training_sampler_keeps_target() {
        let c = Corpus::new(4, 32);
        let cfg = SamplerConfig::new(4);
        for i in 0..40 {
            let ex = sample_training_example(&cfg, &c, 1, i).unwrap();
            assert!(ex.target_index < ex.slots.active_count());
            assert_eq!(ex.mixture.len(), cfg.length);
            assert_eq!(ex, sample_training_example(&cfg, &c, 1, i).unwrap());
        }
    }
}
