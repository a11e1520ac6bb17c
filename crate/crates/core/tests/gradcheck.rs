//! Central finite differences against the tape on the full combined loss.

use muvf_core::model::{Model, ModelConfig, TrainBatch};
use muvf_core::nn::{Graph, ParamStore};
use muvf_core::separator::LossWeights;
use muvf_core::speaker::Corpus;
use muvf_core::synth::{sample_training_example, SamplerConfig};

const H: f64 = 1e-3;

fn loss(model: &Model<f64>, params: &ParamStore<f64>, batch: &TrainBatch<f64>, w: &LossWeights) -> f64 {
    let mut g = Graph::inference(params);
    let l = model.training_loss(&mut g, batch, w, 2.0).unwrap();
    l.values(&g).total
}

/// Max over checked coordinates of |a − n| / max(|a| + |n|, floor).
pub fn check(config: ModelConfig, seed: u64, per_tensor: usize) -> f64 {
    let corpus = Corpus::new(9, config.embed_dim);
    let mut sampler = SamplerConfig::new(config.n_max);
    sampler.length = 8;
    let examples: Vec<_> = (0..2)
        .map(|i| {
            let mut e = sample_training_example(&sampler, &corpus, seed, i).unwrap();
            e.mixture.truncate(3);
            e.clean.truncate(3);
            e.labels.truncate(3);
            e
        })
        .collect();
    let model: Model<f64> = Model::<f32>::new(config, seed).unwrap().cast();
    let batch = TrainBatch::<f64>::from_examples(&examples).unwrap();
    let w = LossWeights::default();

    let mut g = Graph::new(&model.params);
    let l = model.training_loss(&mut g, &batch, &w, 2.0).unwrap();
    let grads = g.backward(l.total).unwrap();

    let mut params = model.params.clone();
    let mut worst = 0f64;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let stride = (n / per_tensor).max(1);
        for k in (0..n).step_by(stride) {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + H;
            let up = loss(&model, &params, &batch, &w);
            params.get_mut(id).data_mut()[k] = orig - H;
            let down = loss(&model, &params, &batch, &w);
            params.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.get(id).data()[k];
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-4);
            if rel > worst {
                worst = rel;
            }
            assert!(rel < 1e-3, "{}[{k}]: analytic {analytic} numeric {numeric}", params.name(id));
        }
    }
    worst
}

#[test]
fn micro_config_gradients_match_finite_differences() {
    let worst = check(ModelConfig::micro(), 3, 64);
    assert!(worst < 1e-3);
}

#[test]
fn cosine_scorer_gradients_match_finite_differences() {
    let worst = check(ModelConfig::micro().with_cosine_scorer(), 4, 32);
    assert!(worst < 1e-3);
}
