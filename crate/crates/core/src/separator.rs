//! Mask application, runtime suppression and the training loss terms in
//! plain form.

use crate::nn::graph::{asym_sq_value, bce_value};

/// Relative weights of the three training losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub asym: f64,
    pub noise: f64,
    pub att: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { asym: 1.0, noise: 0.1, att: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), crate::error::ConfigError> {
        if [self.asym, self.noise, self.att].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(crate::error::ConfigError::new(format!("loss weights must be non-negative, got {self:?}")))
        }
    }
}

pub fn apply_mask(x: &[f32], y: &[f32]) -> Vec<f32> {
    assert_eq!(x.len(), y.len(), "mask width");
    x.iter().zip(y).map(|(a, b)| a * b).collect()
}

/// Blends the enhanced frame with the input according to a smoothed overlap
/// posterior. Returns the output frame and the new suppression weight.
pub fn adaptive_suppress(x: &[f32], enhanced: &[f32], p_overlap: f32, w_prev: f32, beta: f32) -> (Vec<f32>, f32) {
    let w = beta * w_prev + (1.0 - beta) * p_overlap;
    let out = x.iter().zip(enhanced).map(|(&a, &e)| w * e + (1.0 - w) * a).collect();
    (out, w)
}

/// Squared error with under-estimates of the clean value weighted by `alpha`.
pub fn asym_l2_loss(enhanced: &[f32], clean: &[f32], alpha: f32) -> f32 {
    asym_sq_value(enhanced, clean, alpha)
}

/// Mean binary cross-entropy with the probability clamped to `[1e-7, 1 − 1e-7]`.
pub fn noise_loss(p: &[f32], labels: &[f32]) -> f32 {
    if p.is_empty() {
        return 0.0;
    }
    bce_value(p, labels) / p.len() as f32
}

pub fn total_loss(asym: f64, noise: f64, att: f64, w: &LossWeights) -> f64 {
    w.asym * asym + w.noise * noise + w.att * att
}
