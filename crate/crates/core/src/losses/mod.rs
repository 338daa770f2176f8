//! Training objectives with analytic gradients.
//!
//! Classification-style losses take [`CosineLogits`] and return gradients with
//! respect to those logits; [`backprop_to_embeddings`] carries them back to the
//! pre-normalization embeddings and class centers. Embedding-space losses
//! (triplet, angular) return gradients with respect to the unit embeddings.

mod angular;
mod backprop;
mod kd;
mod margin;
mod margins;
mod triplet;

pub use angular::angular_distillation_loss;
pub use backprop::{backprop_to_embeddings, CenterGradients};
pub use kd::{temperature_kd_loss, KdOptions};
pub use margin::{margin_distillation_loss, unified_margin_loss};
pub use margins::{per_sample_margins, per_sample_margins_with, AMaxMode, PerSampleMargins};
pub use triplet::{triplet_distillation_loss, DistanceMetric, TripletBatch, TripletLoss};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Margin bounds used by margin distillation and the triplet baseline.
pub const DEFAULT_M_MIN: f64 = 0.2;
pub const DEFAULT_M_MAX: f64 = 0.5;
pub const DEFAULT_SCALE: f64 = 64.0;

/// `(m1, m2, m3, s)`: multiplicative angular, additive angular and additive
/// cosine margins applied to the target logit, plus the logit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub s: f64,
}

impl MarginSpec {
    pub fn new(m1: f64, m2: f64, m3: f64, s: f64) -> Result<Self> {
        let spec = Self { m1, m2, m3, s };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sphereface(s: f64) -> Self {
        Self { m1: 4.0, m2: 0.0, m3: 0.0, s }
    }

    pub fn cosface(s: f64) -> Self {
        Self { m1: 1.0, m2: 0.0, m3: 0.35, s }
    }

    pub fn arcface(s: f64) -> Self {
        Self { m1: 1.0, m2: 0.5, m3: 0.0, s }
    }

    /// Plain normalized softmax: no margin at all.
    pub fn softmax(s: f64) -> Self {
        Self { m1: 1.0, m2: 0.0, m3: 0.0, s }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.s.is_finite()
            && self.s > 0.0
            && self.m1.is_finite()
            && self.m1 >= 1.0
            && (0.0..std::f64::consts::FRAC_PI_2).contains(&self.m2)
            && (0.0..1.0).contains(&self.m3);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "margin spec out of range: m1={} m2={} m3={} s={}",
                self.m1, self.m2, self.m3, self.s
            )))
        }
    }
}

/// Scalar loss plus its gradient with respect to the cosine logits.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grad_logits: Matrix,
    /// Softmax distribution used in the forward pass (student side for KD).
    pub probabilities: Matrix,
}

/// Scalar loss plus its gradient with respect to unit embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingLoss {
    pub value: f64,
    pub grad: Matrix,
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(Error::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Numerically stable softmax of `z` into `out`; returns `log Σ exp(z)`.
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    max + sum.ln()
}

/// `log Σ exp(z) − z[y]`, kept accurate when `z[y]` dominates and the loss is
/// far below one ulp of the logits.
pub(crate) fn cross_entropy(z: &[f64], y: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let others: f64 = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, v)| (v - max).exp())
        .sum();
    if z[y] == max {
        others.ln_1p()
    } else {
        (max - z[y]) + ((z[y] - max).exp() + others).ln()
    }
}
