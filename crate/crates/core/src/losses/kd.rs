use super::margin::margin_row;
use super::{check_labels, softmax_into, unified_margin_loss, LossOutput, MarginSpec};
use crate::error::{Error, Result};
use crate::geometry::CosineLogits;
use crate::matrix::Matrix;

/// Teacher probabilities below this contribute nothing to the KL sum.
const KL_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdOptions {
    pub temperature: f64,
    /// Weight of an additional hard-label margin loss on the student; 0 disables it.
    pub hard_weight: f64,
}

impl KdOptions {
    pub fn new(temperature: f64) -> Self {
        Self {
            temperature,
            hard_weight: 0.0,
        }
    }
}

/// `T² · KL(softmax(z_t / T) ‖ softmax(z_s / T))` averaged over the batch,
/// where `z` are the margin-adjusted scaled logits of each network.
pub fn temperature_kd_loss(
    student: &CosineLogits,
    teacher: &CosineLogits,
    labels: &[usize],
    spec: &MarginSpec,
    opts: KdOptions,
) -> Result<LossOutput> {
    let t = opts.temperature;
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::NonPositiveTemperature(t));
    }
    spec.validate()?;
    if student.matrix().shape() != teacher.matrix().shape() {
        return Err(Error::DimensionMismatch(format!(
            "student logits {:?} vs teacher logits {:?}",
            student.matrix().shape(),
            teacher.matrix().shape()
        )));
    }
    let (n, classes) = student.matrix().shape();
    check_labels(labels, n, classes)?;
    let margins = (spec.m1, spec.m2, spec.m3);
    let inv_n = 1.0 / n as f64;
    let mut zs = vec![0.0; classes];
    let mut zt = vec![0.0; classes];
    let mut q = vec![0.0; classes];
    let mut probs = Matrix::zeros(n, classes);
    let mut grad = Matrix::zeros(n, classes);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let dt = margin_row(student.row(i), y, margins, spec.s, &mut zs);
        margin_row(teacher.row(i), y, margins, spec.s, &mut zt);
        zs.iter_mut().for_each(|z| *z /= t);
        zt.iter_mut().for_each(|z| *z /= t);
        let lse_s = softmax_into(&zs, probs.row_mut(i));
        let lse_t = softmax_into(&zt, &mut q);
        let mut kl = 0.0;
        for j in 0..classes {
            if q[j] >= KL_ZERO {
                // log q_j − log p_j from the log-sum-exps, stable for tiny p_j
                kl += q[j] * ((zt[j] - lse_t) - (zs[j] - lse_s));
            }
        }
        total += kl;
        let p = probs.row(i).to_vec();
        let g = grad.row_mut(i);
        // ∂(T² KL)/∂(z_s/T) = T² (p − q) and z_s/T = s·c/T off-label
        for j in 0..classes {
            g[j] = t * (p[j] - q[j]) * spec.s * inv_n;
        }
        g[y] *= dt;
    }
    let mut value = t * t * total * inv_n;
    if opts.hard_weight != 0.0 {
        let hard = unified_margin_loss(student, labels, spec)?;
        value += opts.hard_weight * hard.value;
        for (g, h) in grad.as_mut_slice().iter_mut().zip(hard.grad_logits.as_slice()) {
            *g += opts.hard_weight * h;
        }
    }
    Ok(LossOutput {
        value,
        grad_logits: grad,
        probabilities: probs,
    })
}
