use super::EmbeddingLoss;
use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingBatch};
use crate::matrix::Matrix;

/// Mean `1 − cos(x_s, x_t)` over the batch. The gradient is with respect to
/// the student's unit embeddings.
pub fn angular_distillation_loss(student: &EmbeddingBatch, teacher: &EmbeddingBatch) -> Result<EmbeddingLoss> {
    if student.len() != teacher.len() || student.dim() != teacher.dim() {
        return Err(Error::DimensionMismatch(format!(
            "student {}x{} vs teacher {}x{}",
            student.len(),
            student.dim(),
            teacher.len(),
            teacher.dim()
        )));
    }
    let n = student.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, student.dim());
    let mut total = 0.0;
    for i in 0..n {
        total += 1.0 - dot(student.row(i), teacher.row(i));
        for (g, t) in grad.row_mut(i).iter_mut().zip(teacher.row(i)) {
            *g = -t * inv_n;
        }
    }
    Ok(EmbeddingLoss {
        value: total * inv_n,
        grad,
    })
}
