use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingBatch};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistanceMetric {
    /// Squared Euclidean distance.
    L2,
    /// `1 − cos`.
    Cos,
}

impl DistanceMetric {
    fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::L2 => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            DistanceMetric::Cos => 1.0 - dot(a, b),
        }
    }

    /// Adds `scale · ∂d(a, b)/∂a` to `ga` and `scale · ∂d(a, b)/∂b` to `gb`.
    fn accumulate(self, a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: &mut [f64]) {
        match self {
            DistanceMetric::L2 => {
                for k in 0..a.len() {
                    let g = 2.0 * (a[k] - b[k]) * scale;
                    ga[k] += g;
                    gb[k] -= g;
                }
            }
            DistanceMetric::Cos => {
                for k in 0..a.len() {
                    ga[k] -= b[k] * scale;
                    gb[k] -= a[k] * scale;
                }
            }
        }
    }
}

/// Aligned anchor/positive/negative embeddings; row `i` of each forms one triplet.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    pub anchor: EmbeddingBatch,
    pub positive: EmbeddingBatch,
    pub negative: EmbeddingBatch,
}

impl TripletBatch {
    pub fn new(anchor: EmbeddingBatch, positive: EmbeddingBatch, negative: EmbeddingBatch) -> Result<Self> {
        let shape = (anchor.len(), anchor.dim());
        for (name, b) in [("positive", &positive), ("negative", &negative)] {
            if (b.len(), b.dim()) != shape {
                return Err(Error::DimensionMismatch(format!(
                    "{name} batch is {}x{}, anchor is {}x{}",
                    b.len(),
                    b.dim(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(Self {
            anchor,
            positive,
            negative,
        })
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TripletLoss {
    pub value: f64,
    pub grad_anchor: Matrix,
    pub grad_positive: Matrix,
    pub grad_negative: Matrix,
    /// Dynamic margin used for each triplet.
    pub margins: Vec<f64>,
}

/// Dynamic margin from the teacher's distance gap. Kept separate so the
/// margin rule can be swapped without touching the hinge.
pub(crate) fn triplet_margin(teacher_gap: f64, m_min: f64, m_max: f64) -> f64 {
    (m_min + teacher_gap).clamp(m_min, m_max)
}

/// Hinge `max(0, d_S(a,p) − d_S(a,n) + m)` averaged over triplets, with `m`
/// grown by how much farther the teacher places the negative than the positive.
pub fn triplet_distillation_loss(
    student: &TripletBatch,
    teacher: &TripletBatch,
    m_min: f64,
    m_max: f64,
    metric: DistanceMetric,
) -> Result<TripletLoss> {
    let n = student.len();
    if teacher.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} student triplets, {} teacher triplets",
            teacher.len()
        )));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(m_min >= 0.0 && m_min <= m_max) {
        return Err(Error::InvalidConfig(format!(
            "margin bounds must satisfy 0 <= m_min <= m_max, got [{m_min}, {m_max}]"
        )));
    }
    let d = student.anchor.dim();
    let mut ga = Matrix::zeros(n, d);
    let mut gp = Matrix::zeros(n, d);
    let mut gn = Matrix::zeros(n, d);
    let mut margins = Vec::with_capacity(n);
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let gap = metric.distance(teacher.anchor.row(i), teacher.negative.row(i))
            - metric.distance(teacher.anchor.row(i), teacher.positive.row(i));
        let m = triplet_margin(gap, m_min, m_max);
        margins.push(m);
        let (a, p, q) = (student.anchor.row(i), student.positive.row(i), student.negative.row(i));
        let hinge = metric.distance(a, p) - metric.distance(a, q) + m;
        if hinge > 0.0 {
            total += hinge;
            let mut ga_i = vec![0.0; d];
            metric.accumulate(a, p, inv_n, &mut ga_i, gp.row_mut(i));
            metric.accumulate(a, q, -inv_n, &mut ga_i, gn.row_mut(i));
            ga.row_mut(i).copy_from_slice(&ga_i);
        }
    }
    Ok(TripletLoss {
        value: total * inv_n,
        grad_anchor: ga,
        grad_positive: gp,
        grad_negative: gn,
        margins,
    })
}
