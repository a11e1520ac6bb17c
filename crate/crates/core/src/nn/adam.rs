use crate::error::{ConfigError, NumericError};
use crate::nn::graph::Gradients;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators mirroring a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<S>> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected Adam update. A non-finite gradient aborts the step
    /// before any parameter or moment is touched.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) -> Result<(), crate::Error> {
        if grads.grads.len() != params.len() || self.m.len() != params.len() {
            return Err(ConfigError::new("gradient/optimizer state does not match the parameter set").into());
        }
        for id in params.ids() {
            let g = grads.get(id);
            if g.shape() != params.get(id).shape() || self.m[id.index()].shape() != g.shape() {
                return Err(ConfigError::new(format!("shape mismatch for parameter `{}`", params.name(id))).into());
            }
            if !g.all_finite() {
                return Err(NumericError::NonFiniteGradient(params.name(id).to_string()).into());
            }
        }
        self.step += 1;
        let c = self.config;
        let b1 = S::from_f64_lossy(c.beta1);
        let b2 = S::from_f64_lossy(c.beta2);
        let bc1 = S::from_f64_lossy(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = S::from_f64_lossy(1.0 - c.beta2.powi(self.step as i32));
        let lr = S::from_f64_lossy(c.lr);
        let eps = S::from_f64_lossy(c.eps);
        let one = S::one();
        for id in params.ids() {
            let i = id.index();
            let g = grads.get(id).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::matrix(1, 1, vec![x])).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(0.7);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let g = Gradients { grads: vec![Tensor::matrix(1, 1, vec![0.0])] };
        st.step(&mut p, &g).unwrap();
        assert_eq!(p.flat(), vec![0.7]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g0 in [3.0, -0.01, 250.0] {
            let mut p = single(1.0);
            let mut st = AdamState::new(&p, AdamConfig { lr: 0.05, ..Default::default() });
            st.step(&mut p, &Gradients { grads: vec![Tensor::matrix(1, 1, vec![g0])] }).unwrap();
            let moved = 1.0 - p.flat()[0];
            assert!((moved.abs() - 0.05).abs() < 1e-6, "g={g0} moved {moved}");
            assert_eq!(moved.signum(), f64::signum(g0));
        }
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut p = single(1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let err = st.step(&mut p, &Gradients { grads: vec![Tensor::matrix(1, 1, vec![f64::NAN])] }).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert_eq!(st.step, 0);
        assert_eq!(p.flat(), vec![1.0]);
    }

    #[test]
    fn matches_a_scripted_recurrence() {
        let grads = [0.5, -1.0, 2.0, 0.0, -0.25];
        let cfg = AdamConfig { lr: 0.1, beta1: 0.8, beta2: 0.95, eps: 1e-6 };
        let mut p = single(1.0);
        let mut st = AdamState::new(&p, cfg);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            st.step(&mut p, &Gradients { grads: vec![Tensor::matrix(1, 1, vec![g])] }).unwrap();
            m = 0.8 * m + 0.2 * g;
            v = 0.95 * v + 0.05 * g * g;
            let n = (t + 1) as i32;
            x -= 0.1 * (m / (1.0 - 0.8f64.powi(n))) / ((v / (1.0 - 0.95f64.powi(n))).sqrt() + 1e-6);
            assert!((p.flat()[0] - x).abs() < 1e-12, "step {t}");
        }
    }
}
