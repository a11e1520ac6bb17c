//! Speaker embeddings, enrollment, fixed-capacity slot lists, and the
//! synthetic speaker population.
//!
//! A synthetic speaker is a unit identity vector `e` plus a spectral profile
//! `softplus(A·e)` over the 128 mel bands, where `A` is a random matrix fixed
//! per corpus key. Because the profile is an invertible function of `e`
//! (for `dim ≤ 128`), identity can be recovered from features, which is what
//! [`oracle_embed`] does and what the attention network has to learn.

use nalgebra::{DMatrix, DVector as NaVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EmbeddingError, FormatError};
use crate::frontend::{FeatureFrame, NUM_MELS};
use crate::rng::{rng_for, tag};
use crate::synth::SynthParams;

/// Norm tolerance for "unit length".
pub const UNIT_TOL: f64 = 1e-5;

/// Speaker embedding: unit L2 norm, or exactly all-zero as a placeholder.
#[derive(Clone, Debug, PartialEq)]
pub struct DVector(Vec<f32>);

impl DVector {
    /// Validates the unit-or-zero invariant.
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        let v = Self(values);
        let n = v.norm();
        if v.is_zero() || (n - 1.0).abs() <= UNIT_TOL {
            Ok(v)
        } else {
            Err(EmbeddingError::NotUnit { index: 0, norm: n })
        }
    }

    /// Scales `values` to unit length; `None` if the norm is below 1e-6.
    pub fn normalized(values: &[f64]) -> Option<Self> {
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n < 1e-6 || !n.is_finite() {
            return None;
        }
        Some(Self(values.iter().map(|v| (v / n) as f32).collect()))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let (a, b) = (self.norm(), other.norm());
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        self.0.iter().zip(&other.0).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() / (a * b)
    }
}

/// Exactly `capacity` embeddings: the active ones first, then all-zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotList {
    slots: Vec<DVector>,
    active: usize,
}

impl SlotList {
    pub fn slots(&self) -> &[DVector] {
        &self.slots
    }

    pub fn active_count(&self) -> usize {
        self.active
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn dim(&self) -> usize {
        self.slots[0].dim()
    }

    pub fn active(&self) -> &[DVector] {
        &self.slots[..self.active]
    }

    /// Position of `e` among the active slots.
    pub fn position(&self, e: &DVector) -> Option<usize> {
        self.active().iter().position(|s| s == e)
    }

    /// Reorders the slots: new slot `i` holds old slot `perm[i]`. The result is
    /// no longer guaranteed to have its padding at the end, which the network
    /// does not require; used for permutation experiments.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.slots.len(), "permutation length");
        Self { slots: perm.iter().map(|&i| self.slots[i].clone()).collect(), active: self.active }
    }

    /// Same slots with every zero placeholder replaced by a negative-zero vector.
    pub fn with_negative_zero_padding(&self) -> Self {
        let slots = self
            .slots
            .iter()
            .map(|s| if s.is_zero() { DVector(vec![-0.0; s.dim()]) } else { s.clone() })
            .collect();
        Self { slots, active: self.active }
    }
}

/// Mean of unit utterance embeddings, renormalized.
pub fn aggregate_enrollment(utterances: &[DVector]) -> Result<DVector, EmbeddingError> {
    let first = utterances.first().ok_or(EmbeddingError::EmptyEnrollment)?;
    let dim = first.dim();
    let mut mean = vec![0f64; dim];
    for (i, u) in utterances.iter().enumerate() {
        if u.dim() != dim {
            return Err(EmbeddingError::Dimension { found: u.dim(), expected: dim });
        }
        if (u.norm() - 1.0).abs() > UNIT_TOL {
            return Err(EmbeddingError::NotUnit { index: i, norm: u.norm() });
        }
        for (m, &v) in mean.iter_mut().zip(u.values()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= utterances.len() as f64;
    }
    let n = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-6 {
        return Err(EmbeddingError::DegenerateMean(n));
    }
    Ok(DVector::normalized(&mean).expect("norm checked"))
}

/// Active embeddings first, all-zero placeholders after.
pub fn pad_slots(active: &[DVector], capacity: usize) -> Result<SlotList, EmbeddingError> {
    if active.is_empty() {
        return Err(EmbeddingError::NoActive);
    }
    if active.len() > capacity {
        return Err(EmbeddingError::Capacity { active: active.len(), capacity });
    }
    let dim = active[0].dim();
    for (i, e) in active.iter().enumerate() {
        if e.dim() != dim {
            return Err(EmbeddingError::Dimension { found: e.dim(), expected: dim });
        }
        if e.is_zero() {
            return Err(EmbeddingError::ZeroActive(i));
        }
        if (e.norm() - 1.0).abs() > UNIT_TOL {
            return Err(EmbeddingError::NotUnit { index: i, norm: e.norm() });
        }
    }
    let mut slots = active.to_vec();
    slots.resize(capacity, DVector::zeros(dim));
    Ok(SlotList { slots, active: active.len() })
}

/// Softplus, stable for large arguments.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Corpus-wide constants: the identity-to-profile map and generator settings.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub key: u64,
    pub dim: usize,
    /// `NUM_MELS × dim`, row-major.
    map: Vec<f64>,
    pub synth: SynthParams,
}

/// A synthetic talker.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpeaker {
    pub seed: u64,
    pub identity: DVector,
    /// Strictly positive per-band spectral weights.
    pub profile: Vec<f64>,
}

impl Corpus {
    pub fn new(key: u64, dim: usize) -> Self {
        Self::with_params(key, dim, SynthParams::default())
    }

    pub fn with_params(key: u64, dim: usize, synth: SynthParams) -> Self {
        let mut rng = rng_for(&[key, tag::CORPUS_MAP, dim as u64]);
        let scale = synth.profile_spread / (dim as f64).sqrt();
        let map = (0..NUM_MELS * dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        Self { key, dim, map, synth }
    }

    pub fn profile_of(&self, identity: &DVector) -> Vec<f64> {
        (0..NUM_MELS)
            .map(|b| {
                let row = &self.map[b * self.dim..(b + 1) * self.dim];
                softplus(row.iter().zip(identity.values()).map(|(a, &e)| a * e as f64).sum())
            })
            .collect()
    }

    /// Identity uniform on the unit sphere, seeded by `(key, seed)`.
    pub fn make_speaker(&self, seed: u64) -> SynthSpeaker {
        let mut rng = rng_for(&[self.key, tag::SPEAKER, seed]);
        let identity = loop {
            let g: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
            if let Some(v) = DVector::normalized(&g) {
                break v;
            }
        };
        let profile = self.profile_of(&identity);
        SynthSpeaker { seed, identity, profile }
    }

    fn map_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(NUM_MELS, self.dim, &self.map)
    }
}

/// Recovers an identity estimate from features by inverting the corpus map.
///
/// The per-band profile is estimated from the time-averaged linear energy of
/// every stacked block, divided by the corpus mean excitation. A linear
/// least-squares solve of `A·e = softplus⁻¹(profile)` gives a starting point,
/// then a few Gauss-Newton steps fit `ln mean = ln k + ln softplus(A·e)` with a
/// free overall level `k`, which absorbs utterance-wide loudness drift.
pub fn oracle_embed(features: &[FeatureFrame], corpus: &Corpus) -> Result<DVector, EmbeddingError> {
    if features.is_empty() {
        return Err(EmbeddingError::Oracle("empty feature sequence".into()));
    }
    let mut mean = vec![0f64; NUM_MELS];
    let mut blocks = 0usize;
    for f in features {
        if f.0.is_empty() || f.0.len() % NUM_MELS != 0 {
            return Err(EmbeddingError::Oracle(format!("frame width {} is not a multiple of {NUM_MELS}", f.0.len())));
        }
        for block in f.0.chunks(NUM_MELS) {
            for (m, &v) in mean.iter_mut().zip(block) {
                *m += (v as f64).exp();
            }
            blocks += 1;
        }
    }
    let flat = features.iter().all(|f| f.0.iter().all(|&v| v == f.0[0]));
    if flat {
        return Err(EmbeddingError::Oracle("spectrally flat input carries no speaker information".into()));
    }
    let norm = blocks as f64 * corpus.synth.mean_excitation();
    let profile: Vec<f64> = mean.iter().map(|m| (m / norm).max(1e-6)).collect();
    let a = corpus.map_matrix();
    let z = NaVector::from_iterator(NUM_MELS, profile.iter().map(|&p| softplus_inv(p)));
    let chol = (a.transpose() * &a)
        .cholesky()
        .ok_or_else(|| EmbeddingError::Oracle("degenerate normal equations".into()))?;
    let mut x = chol.solve(&(a.transpose() * z));

    let d = corpus.dim;
    let target: Vec<f64> = profile.iter().map(|p| p.ln()).collect();
    let mut log_k = 0.0;
    for _ in 0..8 {
        let ax = &a * &x;
        let mut jac = DMatrix::<f64>::zeros(NUM_MELS, d + 1);
        let mut r = NaVector::<f64>::zeros(NUM_MELS);
        for b in 0..NUM_MELS {
            let sp = softplus(ax[b]);
            r[b] = target[b] - log_k - sp.ln();
            let slope = 1.0 / (1.0 + (-ax[b]).exp()) / sp;
            for j in 0..d {
                jac[(b, j)] = slope * a[(b, j)];
            }
            jac[(b, d)] = 1.0;
        }
        let mut jtj = jac.transpose() * &jac;
        for i in 0..=d {
            jtj[(i, i)] += 1e-6;
        }
        let Some(step_chol) = jtj.cholesky() else { break };
        let step = step_chol.solve(&(jac.transpose() * r));
        if !step.iter().all(|v| v.is_finite()) {
            break;
        }
        for j in 0..d {
            x[j] += step[j];
        }
        log_k += step[d];
    }
    DVector::normalized(x.as_slice()).ok_or_else(|| EmbeddingError::Oracle("zero-confidence solution".into()))
}

/// Parses an enrollment file: one line per speaker, an id then `dim` reals.
pub fn read_enrollment(text: &str, dim: usize) -> Result<Vec<(String, DVector)>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let values: Vec<f32> = parts
            .map(|v| v.parse::<f32>().map_err(|_| FormatError::new(i + 1, format!("bad number `{v}`"))))
            .collect::<Result<_, _>>()?;
        if values.len() != dim {
            return Err(FormatError::new(i + 1, format!("expected {dim} values, found {}", values.len())));
        }
        let e = DVector::new(values).map_err(|e| FormatError::new(i + 1, e.to_string()))?;
        if e.is_zero() {
            return Err(FormatError::new(i + 1, "zero embedding is not a speaker"));
        }
        out.push((id.to_string(), e));
    }
    Ok(out)
}

pub fn write_enrollment(entries: &[(String, DVector)]) -> String {
    let mut s = String::new();
    for (id, e) in entries {
        s.push_str(id);
        for v in e.values() {
            s.push(' ');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> DVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        DVector::new(v).unwrap()
    }

    #[test]
    fn aggregation_cases() {
        let e = unit(4, 1);
        assert_eq!(aggregate_enrollment(std::slice::from_ref(&e)).unwrap(), e);
        assert_eq!(aggregate_enrollment(&[e.clone(), e.clone()]).unwrap(), e);
        let b = aggregate_enrollment(&[unit(4, 0), unit(4, 1)]).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        for (x, y) in b.values().iter().zip([h, h, 0.0, 0.0]) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!((b.norm() - 1.0).abs() < 1e-6);
        assert_eq!(aggregate_enrollment(&[]), Err(EmbeddingError::EmptyEnrollment));
        let neg = DVector::new(vec![-1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(aggregate_enrollment(&[unit(4, 0), neg]), Err(EmbeddingError::DegenerateMean(_))));
    }

    #[test]
    fn padding_cases() {
        let e = unit(3, 0);
        let s = pad_slots(std::slice::from_ref(&e), 4).unwrap();
        assert_eq!(s.slots(), &[e.clone(), DVector::zeros(3), DVector::zeros(3), DVector::zeros(3)]);
        let four: Vec<DVector> = (0..3).map(|i| unit(3, i)).chain([e.clone()]).collect();
        assert_eq!(pad_slots(&four, 4).unwrap().slots(), four.as_slice());
        let five: Vec<DVector> = four.iter().cloned().chain([e.clone()]).collect();
        assert_eq!(pad_slots(&five, 4).unwrap_err(), EmbeddingError::Capacity { active: 5, capacity: 4 });
        assert_eq!(pad_slots(&[e, DVector::zeros(3)], 4).unwrap_err(), EmbeddingError::ZeroActive(1));
    }

    #[test]
    fn dvector_rejects_non_unit() {
        assert!(DVector::new(vec![0.5, 0.0]).is_err());
        assert!(DVector::new(vec![0.0, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn speakers_are_deterministic_and_positive() {
        let c = Corpus::new(7, 64);
        let a = c.make_speaker(11);
        assert_eq!(a, c.make_speaker(11));
        assert_ne!(a, c.make_speaker(12));
        assert!(a.profile.iter().all(|&p| p > 0.0));
        assert!((a.identity.norm() - 1.0).abs() < UNIT_TOL);
    }

    /// Monte-Carlo over 1000 seeds.
    #[test]
    fn seeded_speakers_are_nearly_orthogonal() {
        let c = Corpus::new(3, 256);
        let ids: Vec<DVector> = (0..1000).map(|s| c.make_speaker(s).identity).collect();
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                sum += ids[i].cosine(&ids[j]).abs();
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(mean < 0.2, "mean |cos| {mean}");
    }

    #[test]
    fn oracle_rejects_flat_input() {
        let c = Corpus::new(1, 16);
        let zeros = vec![FeatureFrame(vec![0.0; 512]); 5];
        assert!(matches!(oracle_embed(&zeros, &c), Err(EmbeddingError::Oracle(_))));
        assert!(oracle_embed(&[], &c).is_err());
    }

    #[test]
    fn oracle_inverts_clean_speech_and_degrades_on_mixtures() {
        use crate::synth::{energies_to_features, gen_clean, mix_at_snr};
        let c = Corpus::new(21, 64);
        for seed in 0..5 {
            let (a, b) = (c.make_speaker(seed), c.make_speaker(100 + seed));
            let ea = gen_clean(&a, 301, 1, &c.synth).energies;
            let eb = gen_clean(&b, 301, 2, &c.synth).energies;
            let clean = oracle_embed(&energies_to_features(&ea), &c).unwrap();
            let cos_clean = clean.cosine(&a.identity);
            assert!(cos_clean > 0.9, "clean round trip {cos_clean}");
            let mix = oracle_embed(&energies_to_features(&mix_at_snr(&ea, &eb, 0.0).unwrap()), &c).unwrap();
            assert!(mix.cosine(&a.identity) < cos_clean);
            assert!(mix.cosine(&b.identity) < cos_clean);
        }
    }

    #[test]
    fn enrollment_file_round_trip() {
        let c = Corpus::new(1, 8);
        let entries = vec![("alice".to_string(), c.make_speaker(1).identity), ("bob".to_string(), c.make_speaker(2).identity)];
        let text = write_enrollment(&entries);
        assert_eq!(read_enrollment(&text, 8).unwrap(), entries);
        assert!(read_enrollment("x 1 0\n", 8).is_err());
    }
}
