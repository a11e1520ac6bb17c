//! Attention over enrolled speaker slots, as plain functions on slices.
//!
//! The trainable versions live on the model graph; these are the reference
//! forms used for tracing, diagnostics and tests.

use crate::error::UsageError;
use crate::nn::graph::{cosine, softmax};
use crate::speaker::{DVector, SlotList};

/// Softmax over every slot, zero placeholders included. `active_count` is
/// accepted for interface symmetry and deliberately unused: padding slots
/// compete like any other and the network has to learn to score them low.
pub fn attention_weights(scores: &[f32], _active_count: usize) -> Vec<f32> {
    softmax(scores)
}

/// `Σ_i α_i e_i`, accumulated in slot order.
pub fn attentive_embedding(weights: &[f32], slots: &SlotList) -> Vec<f32> {
    assert_eq!(weights.len(), slots.capacity(), "one weight per slot");
    let mut out = vec![0f32; slots.dim()];
    for (&w, e) in weights.iter().zip(slots.slots()) {
        for (o, &v) in out.iter_mut().zip(e.values()) {
            *o += w * v;
        }
    }
    out
}

/// `Σ_t ‖e_att(t) − e_tar‖²`. `e_tar` must be one of the active slots.
pub fn attention_loss(e_att: &[Vec<f32>], e_tar: &DVector, slots: &SlotList) -> Result<f64, UsageError> {
    if slots.position(e_tar).is_none() {
        return Err(UsageError::new("target embedding is not among the active slots"));
    }
    Ok(e_att
        .iter()
        .map(|a| a.iter().zip(e_tar.values()).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum::<f64>())
        .sum())
}

/// Cosine similarity used by the ablation scorer; a zero-norm key scores 0.
pub fn cosine_score(key: &[f32], e: &[f32]) -> f32 {
    cosine(key, e)
}

/// Concatenation of all slots in order (the order-sensitive alternative).
pub fn super_embedding(slots: &SlotList) -> Vec<f32> {
    slots.slots().iter().flat_map(|e| e.values().iter().copied()).collect()
}

/// Index of the largest weight; ties go to the lowest index.
pub fn argmax(weights: &[f32]) -> usize {
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = i;
        }
    }
    best
}

/// One trace line: `t α_1 … α_N argmax`, optionally followed by `w p_overlap`.
pub fn trace_line(t: usize, weights: &[f32], extra: Option<(f32, f32)>) -> String {
    let mut s = t.to_string();
    for w in weights {
        s.push(' ');
        s.push_str(&w.to_string());
    }
    s.push(' ');
    s.push_str(&argmax(weights).to_string());
    if let Some((w, p)) = extra {
        s.push_str(&format!(" {w} {p}"));
    }
    s
}
