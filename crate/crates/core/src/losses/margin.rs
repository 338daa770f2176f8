use std::f64::consts::PI;

use super::{check_labels, cross_entropy, softmax_into, LossOutput, MarginSpec, PerSampleMargins};
use crate::error::{Error, Result};
use crate::geometry::{safe_arccos, CosineLogits};
use crate::matrix::Matrix;

/// Margin-adjusted target cosine `cos(θ·m1 + m2) − m3` and its derivative with
/// respect to the input cosine. The adjusted angle saturates at π, where the
/// derivative is taken as zero.
#[inline]
pub(crate) fn adjusted_target(c: f64, m1: f64, m2: f64, m3: f64) -> (f64, f64) {
    let theta = safe_arccos(c);
    let phi = theta * m1 + m2;
    if phi >= PI {
        return (-1.0 - m3, 0.0);
    }
    let sin_theta = (1.0 - c * c).max(0.0).sqrt();
    let d = if sin_theta > 0.0 {
        m1 * phi.sin() / sin_theta
    } else {
        0.0
    };
    (phi.cos() - m3, d)
}

/// Scaled logits for one row with the margin applied at `label`; returns the
/// derivative of the target entry with respect to its cosine.
pub(crate) fn margin_row(
    cos: &[f64],
    label: usize,
    (m1, m2, m3): (f64, f64, f64),
    s: f64,
    z: &mut [f64],
) -> f64 {
    for (zj, c) in z.iter_mut().zip(cos) {
        *zj = s * c;
    }
    let (t, dt) = adjusted_target(cos[label], m1, m2, m3);
    z[label] = s * t;
    dt
}

fn margin_softmax(
    logits: &CosineLogits,
    labels: &[usize],
    s: f64,
    margin_of: impl Fn(usize) -> (f64, f64, f64),
) -> Result<LossOutput> {
    let (n, classes) = logits.matrix().shape();
    check_labels(labels, n, classes)?;
    let mut grad = Matrix::zeros(n, classes);
    let mut probs = Matrix::zeros(n, classes);
    let mut z = vec![0.0; classes];
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let dt = margin_row(logits.row(i), y, margin_of(i), s, &mut z);
        softmax_into(&z, probs.row_mut(i));
        total += cross_entropy(&z, y);
        let p = probs.row(i).to_vec();
        let g = grad.row_mut(i);
        for j in 0..classes {
            g[j] = s * p[j] * inv_n;
        }
        g[y] = s * (p[y] - 1.0) * dt * inv_n;
    }
    Ok(LossOutput {
        value: total * inv_n,
        grad_logits: grad,
        probabilities: probs,
    })
}

/// Mean margin-softmax cross-entropy with the `(m1, m2, m3, s)` margins
/// applied to each row's label logit.
pub fn unified_margin_loss(
    logits: &CosineLogits,
    labels: &[usize],
    spec: &MarginSpec,
) -> Result<LossOutput> {
    spec.validate()?;
    margin_softmax(logits, labels, spec.s, |_| (spec.m1, spec.m2, spec.m3))
}

/// ArcFace-style loss where row `i` uses its own additive angular margin.
pub fn margin_distillation_loss(
    logits: &CosineLogits,
    labels: &[usize],
    margins: &PerSampleMargins,
    s: f64,
) -> Result<LossOutput> {
    if margins.margins.len() != logits.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} margins for {} logit rows",
            margins.margins.len(),
            logits.rows()
        )));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidConfig(format!("scale must be positive, got {s}")));
    }
    margin_softmax(logits, labels, s, |i| (1.0, margins.margins[i], 0.0))
}
