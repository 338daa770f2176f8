//! Hypersphere primitives: normalization, cosine logits and angle conversion.
//!
//! Every normalized container remembers the norms of the vectors it was built
//! from, so gradients can be pulled back through the normalization map.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Norms below this are treated as degenerate.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Cosines are clamped to `[-1 + COS_CLAMP, 1 - COS_CLAMP]`.
pub const COS_CLAMP: f64 = 1e-7;

/// Tolerance used when validating that supplied vectors are already unit norm.
pub const UNIT_TOL: f64 = 1e-6;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n < ZERO_NORM_EPS {
        return Err(Error::ZeroNorm { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

#[inline]
pub fn clamp_cos(c: f64) -> f64 {
    c.clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP)
}

/// `acos` for cosines that were clamped upstream; out-of-range inputs are
/// clamped to `[-1, 1]` rather than producing NaN.
#[inline]
pub fn safe_arccos(c: f64) -> f64 {
    c.clamp(-1.0, 1.0).acos()
}

/// Removes the component of `grad` along `unit` and divides by `norm`: the
/// pullback of `v ↦ v / ‖v‖` at a vector with direction `unit` and length `norm`.
pub(crate) fn pull_back_normalization(grad: &[f64], unit: &[f64], norm: f64, out: &mut [f64]) {
    let radial = dot(grad, unit);
    for ((o, g), u) in out.iter_mut().zip(grad).zip(unit) {
        *o = (g - radial * u) / norm;
    }
}

/// N×D batch of unit-norm feature vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    unit: Matrix,
    norms: Vec<f64>,
}

impl EmbeddingBatch {
    /// Normalizes every row of `raw`, remembering the original norms.
    pub fn normalize(raw: &Matrix) -> Result<Self> {
        check_batch_shape(raw.rows(), raw.cols())?;
        let mut unit = raw.clone();
        let mut norms = Vec::with_capacity(raw.rows());
        for i in 0..raw.rows() {
            let n = norm(raw.row(i));
            if n < ZERO_NORM_EPS {
                return Err(Error::ZeroNorm { norm: n });
            }
            unit.row_mut(i).iter_mut().for_each(|x| *x /= n);
            norms.push(n);
        }
        Ok(Self { unit, norms })
    }

    /// Wraps rows that are already unit norm (within [`UNIT_TOL`]).
    pub fn from_unit(unit: Matrix) -> Result<Self> {
        check_batch_shape(unit.rows(), unit.cols())?;
        for i in 0..unit.rows() {
            let n = norm(unit.row(i));
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has norm {n}, expected unit norm"
                )));
            }
        }
        let norms = vec![1.0; unit.rows()];
        Ok(Self { unit, norms })
    }

    pub fn len(&self) -> usize {
        self.unit.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.unit.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.unit
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.unit.row(i)
    }

    /// Norms of the rows before normalization.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn select(&self, indices: &[usize]) -> EmbeddingBatch {
        EmbeddingBatch {
            unit: self.unit.select_rows(indices),
            norms: indices.iter().map(|&i| self.norms[i]).collect(),
        }
    }

    /// Gradient with respect to the pre-normalization rows, given the
    /// gradient with respect to the unit rows.
    pub fn pull_back(&self, grad_unit: &Matrix) -> Result<Matrix> {
        if grad_unit.shape() != self.unit.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} vs embeddings {:?}",
                grad_unit.shape(),
                self.unit.shape()
            )));
        }
        let mut out = Matrix::zeros(self.unit.rows(), self.unit.cols());
        for i in 0..self.unit.rows() {
            pull_back_normalization(grad_unit.row(i), self.unit.row(i), self.norms[i], out.row_mut(i));
        }
        Ok(out)
    }
}

fn check_batch_shape(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if d < 2 {
        return Err(Error::DimensionMismatch(format!(
            "embedding dimension must be at least 2, got {d}"
        )));
    }
    Ok(())
}

/// D×n matrix of unit-norm class centers, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    unit: Matrix,
    norms: Vec<f64>,
    frozen: bool,
}

impl ClassCenters {
    pub fn normalize(raw: &Matrix) -> Result<Self> {
        let (d, n) = raw.shape();
        if n == 0 {
            return Err(Error::InvalidConfig("class centers need at least one class".into()));
        }
        check_batch_shape(1, d)?;
        let mut unit = raw.clone();
        let mut norms = Vec::with_capacity(n);
        for j in 0..n {
            let col = raw.column(j);
            let len = norm(&col);
            if len < ZERO_NORM_EPS {
                return Err(Error::ZeroNorm { norm: len });
            }
            for (r, v) in col.iter().enumerate() {
                unit.set(r, j, v / len);
            }
            norms.push(len);
        }
        Ok(Self {
            unit,
            norms,
            frozen: false,
        })
    }

    /// Reassembles centers from stored unit columns and their original norms.
    pub fn from_parts(unit: Matrix, norms: Vec<f64>, frozen: bool) -> Result<Self> {
        let (d, n) = unit.shape();
        if norms.len() != n || n == 0 {
            return Err(Error::ShapeMismatch(format!("{} norms for {n} centers", norms.len())));
        }
        check_batch_shape(1, d)?;
        for (j, &nj) in norms.iter().enumerate() {
            let len = norm(&unit.column(j));
            if (len - 1.0).abs() > UNIT_TOL || nj.is_nan() || nj < ZERO_NORM_EPS {
                return Err(Error::ShapeMismatch(format!("center {j} is not a unit column")));
            }
        }
        Ok(Self { unit, norms, frozen })
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn dim(&self) -> usize {
        self.unit.rows()
    }

    pub fn classes(&self) -> usize {
        self.unit.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.unit
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn center(&self, j: usize) -> Vec<f64> {
        self.unit.column(j)
    }

    /// Gradient with respect to the pre-normalization columns.
    pub fn pull_back(&self, grad_unit: &Matrix) -> Result<Matrix> {
        if grad_unit.shape() != self.unit.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient {:?} vs centers {:?}",
                grad_unit.shape(),
                self.unit.shape()
            )));
        }
        let (d, n) = self.unit.shape();
        let mut out = Matrix::zeros(d, n);
        let mut buf = vec![0.0; d];
        for j in 0..n {
            let g = grad_unit.column(j);
            let u = self.unit.column(j);
            pull_back_normalization(&g, &u, self.norms[j], &mut buf);
            for (r, v) in buf.iter().enumerate() {
                out.set(r, j, *v);
            }
        }
        Ok(out)
    }
}

/// N×n matrix of clamped cosines between embeddings and class centers.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineLogits {
    data: Matrix,
}

impl CosineLogits {
    /// Wraps a matrix of cosines, clamping every entry.
    pub fn new(mut data: Matrix) -> Self {
        data.as_mut_slice().iter_mut().for_each(|c| *c = clamp_cos(*c));
        Self { data }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn classes(&self) -> usize {
        self.data.cols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn select(&self, indices: &[usize]) -> CosineLogits {
        CosineLogits {
            data: self.data.select_rows(indices),
        }
    }
}

pub fn cosine_logits(x: &EmbeddingBatch, w: &ClassCenters) -> Result<CosineLogits> {
    if x.dim() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have dimension {}, class centers {}",
            x.dim(),
            w.dim()
        )));
    }
    Ok(CosineLogits::new(x.matrix().matmul(w.matrix())?))
}
