use crate::error::{Error, Result};
use crate::geometry::{ClassCenters, EmbeddingBatch, COS_CLAMP};
use crate::matrix::Matrix;

/// Gradients with respect to the pre-normalization embeddings and centers.
#[derive(Debug, Clone)]
pub struct CenterGradients {
    pub grad_x: Matrix,
    pub grad_w: Matrix,
    /// False when the centers are frozen: `grad_w` is informational only.
    pub grad_w_applicable: bool,
}

/// Chain rule through `cos = normalize(x) · normalize(w)` including the clamp,
/// whose saturated entries pass no gradient.
pub fn backprop_to_embeddings(
    grad_logits: &Matrix,
    x: &EmbeddingBatch,
    w: &ClassCenters,
) -> Result<CenterGradients> {
    if x.dim() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have dimension {}, class centers {}",
            x.dim(),
            w.dim()
        )));
    }
    if grad_logits.shape() != (x.len(), w.classes()) {
        return Err(Error::DimensionMismatch(format!(
            "logit gradient {:?} vs expected {:?}",
            grad_logits.shape(),
            (x.len(), w.classes())
        )));
    }
    let raw = x.matrix().matmul(w.matrix())?;
    let mut g = grad_logits.clone();
    for (gv, c) in g.as_mut_slice().iter_mut().zip(raw.as_slice()) {
        if c.abs() > 1.0 - COS_CLAMP {
            *gv = 0.0;
        }
    }
    let grad_unit_x = g.matmul_t(w.matrix())?;
    let grad_unit_w = x.matrix().t_matmul(&g)?;
    Ok(CenterGradients {
        grad_x: x.pull_back(&grad_unit_x)?,
        grad_w: w.pull_back(&grad_unit_w)?,
        grad_w_applicable: !w.is_frozen(),
    })
}
