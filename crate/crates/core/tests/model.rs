use muvf_core::frontend::FeatureFrame;
use muvf_core::model::{FrameOutput, Model, ModelConfig};
use muvf_core::nn::{load_checkpoint, LstmState};
use muvf_core::speaker::{Corpus, SlotList};
use muvf_core::synth::{eval_speaker_seed, gen_example, InterfererKind, MixtureSpec, TrainingExample};

fn example(active: usize, length: usize, i: u64, dim: usize) -> TrainingExample {
    let corpus = Corpus::new(3, dim);
    let spec = MixtureSpec {
        target_seed: eval_speaker_seed(i),
        interferer: InterfererKind::GuestSpeech,
        snr_db: 4.0,
        length,
        active,
        example_seed: 500 + i,
    };
    gen_example(&spec, &corpus, 4).unwrap()
}

fn infer(model: &Model<f32>, x: &[FeatureFrame], slots: &SlotList) -> Vec<FrameOutput<f32>> {
    model.infer_batch(&[x], &[slots], 0.9).unwrap().pop().unwrap()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn zero_model_has_neutral_outputs() {
    let model = Model::<f32>::zeroed(ModelConfig::desk()).unwrap();
    let ex = example(2, 8, 1, 64);
    for f in infer(&model, &ex.mixture, &ex.slots) {
        assert!(f.key.iter().all(|&k| k == 0.0));
        assert!(f.alpha.iter().all(|&a| a == 0.25));
        assert!(f.mask.iter().all(|&m| m == 0.5));
        assert_eq!(f.p_overlap, 0.5);
    }
}

#[test]
fn explicit_sub_network_paths_reproduce_the_pipeline() {
    let model = Model::<f32>::new(ModelConfig::desk(), 9).unwrap();
    let ex = example(3, 12, 2, 64);
    let out = infer(&model, &ex.mixture, &ex.slots);
    let cfg = model.config();
    let (keys, _) = model.prenet_forward(&ex.mixture, &LstmState::zeros(&cfg.prenet, 1)).unwrap();
    let e_att: Vec<Vec<f32>> = out.iter().map(|f| f.e_att.clone()).collect();
    let (masks, _) = model.mask_forward(&ex.mixture, &e_att, &LstmState::zeros(&cfg.mask_lstm, 1)).unwrap();
    let (ps, _) = model.noise_forward(&ex.mixture, &LstmState::zeros(&cfg.noise_lstm, 1)).unwrap();
    for (t, f) in out.iter().enumerate() {
        assert!(max_diff(&keys[t], &f.key) < 1e-6);
        assert!(max_diff(&masks[t], &f.mask) < 1e-6);
        assert!((ps[t] - f.p_overlap).abs() < 1e-6);
        // scoring each slot on the explicit concatenation, then a softmax
        let s: Vec<f64> = ex.slots.slots().iter().map(|e| model.score(&f.key, e.values()).unwrap() as f64).collect();
        let z: f64 = s.iter().map(|v| v.exp()).sum();
        for (a, v) in f.alpha.iter().zip(&s) {
            assert!((*a as f64 - v.exp() / z).abs() < 1e-6);
        }
    }
}

#[test]
fn streaming_matches_whole_sequence_inference() {
    for cfg in [ModelConfig::desk(), ModelConfig::desk().with_cosine_scorer()] {
        let model = Model::<f32>::new(cfg, 4).unwrap();
        let ex = example(2, 200, 3, 64);
        let batch = infer(&model, &ex.mixture, &ex.slots);
        let mut session = model.stream(&ex.slots, 0.9).unwrap();
        for (x, want) in ex.mixture.iter().zip(&batch) {
            let got = session.push_frame(x).unwrap();
            assert!(max_diff(&got.output, &want.output) < 1e-6);
            assert!(max_diff(&got.alpha, &want.alpha) < 1e-6);
            assert!((got.w - want.w).abs() < 1e-6);
        }
        session.close();
        assert!(session.push_frame(&ex.mixture[0]).is_err());
    }
}

#[test]
fn outputs_do_not_depend_on_slot_order() {
    let model = Model::<f32>::new(ModelConfig::desk(), 5).unwrap();
    let ex = example(3, 8, 4, 64);
    let base = infer(&model, &ex.mixture, &ex.slots);
    for perm in [[1, 0, 2, 3], [3, 2, 1, 0], [2, 3, 0, 1]] {
        let p = ex.slots.permuted(&perm);
        for (a, b) in base.iter().zip(infer(&model, &ex.mixture, &p)) {
            assert_eq!(a.output, b.output);
            assert_eq!(a.e_att, b.e_att);
            for (i, &src) in perm.iter().enumerate() {
                assert_eq!(b.alpha[i], a.alpha[src]);
            }
        }
    }
}

#[test]
fn negative_zero_padding_is_indistinguishable() {
    let model = Model::<f32>::new(ModelConfig::desk(), 6).unwrap();
    let ex = example(1, 8, 5, 64);
    let a = infer(&model, &ex.mixture, &ex.slots);
    let b = infer(&model, &ex.mixture, &ex.slots.with_negative_zero_padding());
    assert_eq!(a, b);
}

#[test]
fn wrong_slot_geometry_is_rejected() {
    let model = Model::<f32>::new(ModelConfig::micro(), 1).unwrap();
    let ex = example(2, 8, 6, 64);
    assert!(model.infer_batch(&[&ex.mixture], &[&ex.slots], 0.9).is_err());
    let desk = Model::<f32>::new(ModelConfig::desk(), 1).unwrap();
    assert!(desk.stream(&ex.slots, 1.0).is_err());
}

fn lstm(input: usize, widths: &[usize]) -> usize {
    let mut w = input;
    let mut n = 0;
    for &h in widths {
        n += 4 * h * (w + h) + 4 * h;
        w = h;
    }
    n
}

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn by_formula(c: &ModelConfig) -> usize {
    let mut n = lstm(c.feature_dim, &c.prenet);
    let mut w = c.key_width() + c.embed_dim;
    for &h in &c.scorer {
        n += dense(w, h);
        w = h;
    }
    if !c.scorer.is_empty() {
        n += dense(w, 1);
    }
    n += lstm(c.feature_dim + c.embed_dim, &c.mask_lstm) + dense(*c.mask_lstm.last().unwrap(), c.feature_dim);
    n += lstm(c.feature_dim, &c.noise_lstm) + dense(*c.noise_lstm.last().unwrap(), c.noise_fc) + dense(c.noise_fc, 1);
    n
}

#[test]
fn parameter_counts_follow_the_layer_formulas() {
    for c in [ModelConfig::desk(), ModelConfig::full(), ModelConfig::micro(), ModelConfig::desk().with_cosine_scorer()] {
        let model = Model::<f32>::new(c.clone(), 0).unwrap();
        assert_eq!(model.params.scalar_count(), by_formula(&c), "{c:?}");
        assert_eq!(c.param_count(), by_formula(&c));
    }
    assert_eq!(ModelConfig::full().param_count(), 3_357_186);
}

#[test]
fn checkpoints_round_trip_and_list_every_tensor() {
    let model = Model::<f32>::new(ModelConfig::desk(), 8).unwrap();
    let bytes = model.to_checkpoint();
    let back = Model::from_checkpoint(&bytes, Some(&ModelConfig::desk())).unwrap();
    assert_eq!(back.params.flat(), model.params.flat());
    let ck = load_checkpoint(&bytes).unwrap();
    let names: Vec<&str> = ck.entries.iter().map(|e| e.name.as_str()).collect();
    let want: Vec<&str> = model.params.iter().map(|(n, _)| n).collect();
    assert_eq!(names, want);
    let mut other = ModelConfig::desk();
    other.n_max = 3;
    assert!(Model::from_checkpoint(&bytes, Some(&other)).is_err());
    assert!(Model::from_checkpoint(&bytes[..bytes.len() - 1], None).is_err());
}
