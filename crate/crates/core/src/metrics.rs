//! Evaluation metrics and the multi-user trend report.
//!
//! Speech recognition is out of reach here, so the report uses selection
//! accuracy and SNR improvement as proxies for word error rate, plus an
//! oracle-embedding EER for the verification side.

use std::fmt::Write as _;

use crate::attention::argmax;
use crate::error::{Error, MetricError};
use crate::frontend::FeatureFrame;
use crate::model::Model;
use crate::speaker::{oracle_embed, Corpus};
use crate::synth::{eval_speaker_seed, gen_example, InterfererKind, MixtureSpec, TrainingExample};

/// Fraction of masked frames whose attention argmax is `target_index`.
pub fn selection_accuracy<W: AsRef<[f32]>>(traces: &[W], target_index: usize, mask: &[bool]) -> Result<f64, MetricError> {
    if traces.len() != mask.len() {
        return Err(MetricError::Undefined("trace and mask lengths differ"));
    }
    let (mut hit, mut n) = (0usize, 0usize);
    for (w, &m) in traces.iter().zip(mask) {
        if m {
            n += 1;
            hit += usize::from(argmax(w.as_ref()) == target_index);
        }
    }
    if n == 0 {
        return Err(MetricError::Undefined("no target-speech frames"));
    }
    Ok(hit as f64 / n as f64)
}

fn energy(v: f32) -> f64 {
    (v as f64).exp()
}

/// `10·log10(Σ(m − c)² / Σ(y − c)²)` on linear energies (features are
/// exponentiated first). A perfect reconstruction gives `+∞`.
pub fn snr_improvement<F: AsRef<[f32]>>(mixture: &[F], enhanced: &[F], clean: &[F]) -> Result<f64, MetricError> {
    if mixture.len() != clean.len() || enhanced.len() != clean.len() {
        return Err(MetricError::Undefined("sequences are not aligned"));
    }
    let (mut before, mut after) = (0f64, 0f64);
    for ((m, y), c) in mixture.iter().zip(enhanced).zip(clean) {
        let (m, y, c) = (m.as_ref(), y.as_ref(), c.as_ref());
        if m.len() != c.len() || y.len() != c.len() {
            return Err(MetricError::Undefined("frame widths differ"));
        }
        for k in 0..c.len() {
            let ck = energy(c[k]);
            before += (energy(m[k]) - ck).powi(2);
            after += (energy(y[k]) - ck).powi(2);
        }
    }
    if after == 0.0 {
        return Ok(f64::INFINITY);
    }
    if before == 0.0 {
        return Err(MetricError::Undefined("mixture equals the clean reference"));
    }
    Ok(10.0 * (before / after).log10())
}

/// `10·log10(Σ y² / Σ x²)` on linear energies: how far the output level moved
/// away from the input. Used where there is no interference to improve on.
pub fn level_change<F: AsRef<[f32]>>(input: &[F], output: &[F]) -> Result<f64, MetricError> {
    if input.len() != output.len() {
        return Err(MetricError::Undefined("sequences are not aligned"));
    }
    let (mut a, mut b) = (0f64, 0f64);
    for (x, y) in input.iter().zip(output) {
        a += x.as_ref().iter().map(|&v| energy(v).powi(2)).sum::<f64>();
        b += y.as_ref().iter().map(|&v| energy(v).powi(2)).sum::<f64>();
    }
    if a == 0.0 || b == 0.0 {
        return Err(MetricError::Undefined("zero energy"));
    }
    Ok(10.0 * (b / a).log10())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialScores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

/// Accept when `score ≥ threshold`. Sweeps every distinct score; the rate is
/// read off where false accepts and false rejects cross, interpolating
/// linearly between the two neighbouring thresholds.
pub fn eer(scores: &TrialScores) -> Result<Eer, MetricError> {
    let (g, i) = (&scores.genuine, &scores.impostor);
    if g.is_empty() || i.is_empty() {
        return Err(MetricError::Undefined("EER needs genuine and impostor trials"));
    }
    if g.iter().chain(i).any(|s| s.is_nan()) {
        return Err(MetricError::Undefined("NaN trial score"));
    }
    let mut all: Vec<(f64, bool)> = g.iter().map(|&s| (s, true)).chain(i.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ng, ni) = (g.len() as f64, i.len() as f64);
    // Walking thresholds upwards: genuine below τ are rejected, impostors at
    // or above τ are accepted.
    let (mut rejected, mut accepted) = (0usize, i.len());
    let mut points = Vec::with_capacity(all.len() + 1);
    let mut k = 0;
    while k < all.len() {
        let tau = all[k].0;
        points.push((tau, accepted as f64 / ni, rejected as f64 / ng));
        while k < all.len() && all[k].0 == tau {
            if all[k].1 {
                rejected += 1;
            } else {
                accepted -= 1;
            }
            k += 1;
        }
    }
    points.push((f64::INFINITY, 0.0, 1.0));
    Ok(crossing(&points))
}

/// First sign change of `far − frr` over `(τ, far, frr)` points sorted by τ.
pub(crate) fn crossing(points: &[(f64, f64, f64)]) -> Eer {
    for w in points.windows(2) {
        let (t1, a1, r1) = w[0];
        let (t2, a2, r2) = w[1];
        let (d1, d2) = (a1 - r1, a2 - r2);
        if d1 == 0.0 {
            return Eer { rate: a1, threshold: t1 };
        }
        if d1 > 0.0 && d2 <= 0.0 {
            let lam = d1 / (d1 - d2);
            let threshold = if t2.is_finite() { t1 + lam * (t2 - t1) } else { t1 };
            return Eer { rate: a1 + lam * (a2 - a1), threshold };
        }
    }
    let &(t, a, _) = points.last().expect("at least one point");
    Eer { rate: a, threshold: t }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Condition {
    Clean,
    NonspeechNoise,
    SpeechNoise,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Self::Clean, Self::NonspeechNoise, Self::SpeechNoise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Clean => "clean",
            Self::NonspeechNoise => "nonspeech",
            Self::SpeechNoise => "speech",
        }
    }

    pub fn interferer(self) -> InterfererKind {
        match self {
            Self::Clean => InterfererKind::None,
            Self::NonspeechNoise => InterfererKind::NonspeechNoise,
            Self::SpeechNoise => InterfererKind::GuestSpeech,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendRow {
    pub condition: Condition,
    pub users: usize,
    pub selection_accuracy: f64,
    /// SNR improvement in dB; on clean rows, the output level change.
    pub snr_db: f64,
    pub eer: f64,
    pub eer_no_filter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrendReport {
    pub rows: Vec<TrendRow>,
}

pub const REPORT_NOTE: &str =
    "# WER proxies: selection accuracy and SNR improvement; clean rows give output level change in dB as snr_db";
pub const REPORT_HEADER: &str = "condition\tusers\tselection_accuracy\tsnr_db\teer\teer_no_filter";

impl TrendReport {
    pub fn row(&self, condition: Condition, users: usize) -> Option<&TrendRow> {
        self.rows.iter().find(|r| r.condition == condition && r.users == users)
    }

    /// Rows of one condition, ordered by user count.
    pub fn series(&self, condition: Condition) -> Vec<&TrendRow> {
        let mut v: Vec<&TrendRow> = self.rows.iter().filter(|r| r.condition == condition).collect();
        v.sort_by_key(|r| r.users);
        v
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("{REPORT_NOTE}\n{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.4}\t{:.3}\t{:.4}\t{:.4}",
                r.condition.name(),
                r.users,
                r.selection_accuracy,
                r.snr_db,
                r.eer,
                r.eer_no_filter
            );
        }
        s
    }

    /// Grouped bars: one group per condition, one bar per user count, height
    /// proportional to selection accuracy.
    pub fn to_svg(&self) -> String {
        let (bar, gap, h) = (18.0, 24.0, 160.0);
        let groups = Condition::ALL.len();
        let per = self.rows.iter().map(|r| r.users).max().unwrap_or(1);
        let width = groups as f64 * (per as f64 * bar + gap) + gap;
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\">\n",
            h + 40.0
        );
        for (gi, c) in Condition::ALL.iter().enumerate() {
            let x0 = gap + gi as f64 * (per as f64 * bar + gap);
            for r in self.series(*c) {
                let bh = h * r.selection_accuracy.clamp(0.0, 1.0);
                let x = x0 + (r.users - 1) as f64 * bar;
                let _ = writeln!(
                    s,
                    "<rect x=\"{x}\" y=\"{}\" width=\"{}\" height=\"{bh}\" fill=\"#4878a8\"><title>{} users={} acc={:.3} snr={:.2}dB</title></rect>",
                    10.0 + h - bh,
                    bar - 2.0,
                    c.name(),
                    r.users,
                    r.selection_accuracy,
                    r.snr_db
                );
            }
            let _ = writeln!(s, "<text x=\"{x0}\" y=\"{}\" font-size=\"11\">{}</text>", h + 30.0, c.name());
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Whether `v` never rises by more than `tol` (relative to the previous value's
/// magnitude, with an absolute floor of `tol`) from one entry to the next.
pub fn non_increasing(v: &[f64], tol: f64) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] + tol * w[0].abs().max(1.0))
}

#[derive(Clone, Debug)]
pub struct EvalGrid {
    pub n_max: usize,
    pub utterances: usize,
    /// Stacked frames per utterance.
    pub length: usize,
    pub seed: u64,
    pub beta: f32,
}

impl EvalGrid {
    pub fn new(n_max: usize) -> Self {
        Self { n_max, utterances: 32, length: 80, seed: 7, beta: 0.9 }
    }

    /// Mixture spec for one cell; audio depends only on `(condition, index)`,
    /// so the same mixtures are reused for every user count.
    pub fn spec(&self, condition: Condition, users: usize, index: usize) -> MixtureSpec {
        let n = self.utterances.max(2) as f64;
        MixtureSpec {
            target_seed: eval_speaker_seed(index as u64),
            interferer: condition.interferer(),
            snr_db: if condition == Condition::Clean { f64::INFINITY } else { 1.0 + 9.0 * index as f64 / (n - 1.0) },
            length: self.length,
            active: users,
            example_seed: self.seed.wrapping_mul(1_000_003).wrapping_add(index as u64),
        }
    }

    pub fn examples(&self, condition: Condition, users: usize, corpus: &Corpus) -> Result<Vec<TrainingExample>, Error> {
        (0..self.utterances)
            .map(|i| gen_example(&self.spec(condition, users, i), corpus, self.n_max).map_err(Error::from))
            .collect()
    }
}

/// Outputs of a model on a set of examples: per frame attention weights and
/// final (suppressed) output.
pub struct Evaluated {
    pub alpha: Vec<Vec<Vec<f32>>>,
    pub output: Vec<Vec<FeatureFrame>>,
}

pub fn run_model(model: &Model<f32>, examples: &[TrainingExample], beta: f32) -> Result<Evaluated, Error> {
    let mix: Vec<&[FeatureFrame]> = examples.iter().map(|e| e.mixture.as_slice()).collect();
    let slots: Vec<_> = examples.iter().map(|e| &e.slots).collect();
    let out = model.infer_batch(&mix, &slots, beta)?;
    Ok(Evaluated {
        alpha: out.iter().map(|seq| seq.iter().map(|f| f.alpha.clone()).collect()).collect(),
        output: out.into_iter().map(|seq| seq.into_iter().map(|f| FeatureFrame(f.output)).collect()).collect(),
    })
}

fn cell(
    model: &Model<f32>,
    corpus: &Corpus,
    grid: &EvalGrid,
    condition: Condition,
    users: usize,
) -> Result<TrendRow, Error> {
    let examples = grid.examples(condition, users, corpus)?;
    let ev = run_model(model, &examples, grid.beta)?;
    let (mut hit, mut frames) = (0f64, 0f64);
    let (mut mix, mut out, mut clean) = (Vec::new(), Vec::new(), Vec::new());
    let (mut with, mut without) = (TrialScores::default(), TrialScores::default());
    for (i, (e, (alpha, y))) in examples.iter().zip(ev.alpha.iter().zip(&ev.output)).enumerate() {
        let n = e.target_speech.iter().filter(|&&b| b).count() as f64;
        if n > 0.0 {
            hit += n * selection_accuracy(alpha, e.target_index, &e.target_speech)?;
            frames += n;
        }
        mix.extend_from_slice(&e.mixture);
        out.extend_from_slice(y);
        clean.extend_from_slice(&e.clean);
        let target = &e.slots.slots()[e.target_index];
        let guest = corpus.make_speaker(grid.spec(condition, users, i).guest_seed()).identity;
        for (trials, feats) in [(&mut with, y.as_slice()), (&mut without, e.mixture.as_slice())] {
            let emb = oracle_embed(feats, corpus)?;
            trials.genuine.push(emb.cosine(target) as f64);
            trials.impostor.push(emb.cosine(&guest) as f64);
        }
    }
    if frames == 0.0 {
        return Err(MetricError::Undefined("no target-speech frames in the grid cell").into());
    }
    let snr_db = if condition == Condition::Clean { level_change(&mix, &out)? } else { snr_improvement(&mix, &out, &clean)? };
    Ok(TrendRow {
        condition,
        users,
        selection_accuracy: hit / frames,
        snr_db,
        eer: eer(&with)?.rate,
        eer_no_filter: eer(&without)?.rate,
    })
}

/// Evaluates every (condition, user count) cell on the same seeded mixtures.
pub fn trend_report(model: &Model<f32>, corpus: &Corpus, grid: &EvalGrid) -> Result<TrendReport, Error> {
    let mut rows = Vec::with_capacity(3 * grid.n_max);
    for c in Condition::ALL {
        for users in 1..=grid.n_max {
            rows.push(cell(model, corpus, grid, c, users)?);
        }
    }
    Ok(TrendReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn frames(v: &[&[f32]]) -> Vec<Vec<f32>> {
        v.iter().map(|f| f.to_vec()).collect()
    }

    #[test]
    fn selection_cases() {
        let one_hot = vec![vec![0.0, 1.0, 0.0]; 5];
        assert_eq!(selection_accuracy(&one_hot, 1, &[true; 5]).unwrap(), 1.0);
        assert_eq!(selection_accuracy(&one_hot, 0, &[true, false, true, false, false]).unwrap(), 0.0);
        assert!(selection_accuracy(&one_hot, 1, &[false; 5]).is_err());
        assert!(selection_accuracy(&one_hot, 1, &[true; 4]).is_err());
    }

    #[test]
    fn random_weights_over_four_slots_hit_a_quarter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let traces: Vec<Vec<f32>> = (0..n).map(|_| (0..4).map(|_| rng.gen::<f32>()).collect()).collect();
        let acc = selection_accuracy(&traces, 2, &vec![true; n]).unwrap();
        assert!((acc - 0.25).abs() < 0.01, "{acc}");
    }

    #[test]
    fn snr_cases() {
        let c = frames(&[&[0.0, 1.0], &[2.0, 0.5]]);
        let m = frames(&[&[1.0, 1.5], &[2.5, 1.0]]);
        assert_eq!(snr_improvement(&m, &m, &c).unwrap(), 0.0);
        assert_eq!(snr_improvement(&m, &c, &c).unwrap(), f64::INFINITY);
        // Halving the linear-energy error everywhere.
        let half: Vec<Vec<f32>> = m
            .iter()
            .zip(&c)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| ((x.exp() + y.exp()) / 2.0).ln()).collect())
            .collect();
        assert!((snr_improvement(&m, &half, &c).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-4);
        assert!(snr_improvement(&c, &m, &c).is_err());
    }

    #[test]
    fn snr_three_frame_script() {
        let ln = |v: f64| v.ln() as f32;
        let c = vec![vec![ln(1.0)], vec![ln(2.0)], vec![ln(4.0)]];
        let m = vec![vec![ln(3.0)], vec![ln(2.5)], vec![ln(4.0)]];
        let y = vec![vec![ln(1.5)], vec![ln(2.0)], vec![ln(3.0)]];
        // errors before: 2, 0.5, 0 → 4.25; after: 0.5, 0, 1 → 1.25
        let want = 10.0 * (4.25f64 / 1.25).log10();
        assert!((snr_improvement(&m, &y, &c).unwrap() - want).abs() < 1e-5);
    }

    #[test]
    fn level_change_cases() {
        let x = frames(&[&[0.0, 1.0]]);
        assert_eq!(level_change(&x, &x).unwrap(), 0.0);
        let y = frames(&[&[0.5f32.ln(), (0.5f64 * 1f64.exp()).ln() as f32]]);
        assert!((level_change(&x, &y).unwrap() + 20.0 * 2f64.log10()).abs() < 1e-5);
    }

    #[test]
    fn eer_cases() {
        let sep = TrialScores { genuine: vec![1.0; 3], impostor: vec![0.0; 4] };
        assert_eq!(eer(&sep).unwrap().rate, 0.0);
        let same = TrialScores { genuine: vec![0.2, 0.5, 0.9], impostor: vec![0.2, 0.5, 0.9] };
        assert!((eer(&same).unwrap().rate - 0.5).abs() < 1e-12);
        let hand = TrialScores { genuine: vec![0.9, 0.8, 0.3], impostor: vec![0.7, 0.2, 0.1] };
        let e = eer(&hand).unwrap();
        assert!((e.rate - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.threshold, 0.7);
        assert!(eer(&TrialScores { genuine: vec![], impostor: vec![1.0] }).is_err());
    }

    #[test]
    fn non_increasing_with_tolerance() {
        assert!(non_increasing(&[1.0, 0.9, 0.91, 0.5], 0.02));
        assert!(!non_increasing(&[0.5, 0.9], 0.02));
    }

    proptest! {
        #[test]
        fn eer_is_a_rate_and_swaps_to_its_complement(
            g in proptest::collection::vec(-1f64..1.0, 1..12),
            i in proptest::collection::vec(-1f64..1.0, 1..12),
        ) {
            let a = eer(&TrialScores { genuine: g.clone(), impostor: i.clone() }).unwrap().rate;
            let b = eer(&TrialScores { genuine: i, impostor: g }).unwrap().rate;
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a + b - 1.0).abs() < 1e-12, "{} {}", a, b);
        }

        #[test]
        fn accuracy_ignores_consistent_slot_relabelling(
            raw in proptest::collection::vec(proptest::collection::vec(0f32..1.0, 4), 1..20),
            target in 0usize..4,
            shift in 0usize..4,
        ) {
            let mask = vec![true; raw.len()];
            let perm: Vec<Vec<f32>> = raw.iter().map(|w| (0..4).map(|k| w[(k + shift) % 4]).collect()).collect();
            let a = selection_accuracy(&raw, target, &mask).unwrap();
            let b = selection_accuracy(&perm, (target + 4 - shift) % 4, &mask).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, b);
        }
    }
}
