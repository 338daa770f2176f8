//! Feed-forward embedder: dense layers with ReLU between them and a final
//! row-wise L2 normalization.

mod checkpoint;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, Role, TrainingMeta, CHECKPOINT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingBatch;
use crate::matrix::Matrix;
use crate::rng::{stream_rng, streams};

/// Layer widths `[D_in, h_1, …, h_k, D]` with one weight matrix per consecutive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    /// `weights[l]` is `layer_dims[l + 1] × layer_dims[l]`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Teacher preset hidden widths.
pub const TEACHER_HIDDEN: [usize; 2] = [256, 256];
/// Student preset hidden widths.
pub const STUDENT_HIDDEN: [usize; 1] = [32];

pub fn teacher_dims(d_in: usize, d: usize) -> Vec<usize> {
    [&[d_in][..], &TEACHER_HIDDEN, &[d]].concat()
}

pub fn student_dims(d_in: usize, d: usize) -> Vec<usize> {
    [&[d_in][..], &STUDENT_HIDDEN, &[d]].concat()
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("invalid layer dims {layer_dims:?}")));
        }
        let mut rng = stream_rng(seed, streams::INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("layer_dims is never empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = &self.layer_dims;
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::ShapeMismatch(format!("invalid layer dims {dims:?}")));
        }
        if self.weights.len() + 1 != dims.len() || self.biases.len() + 1 != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weight matrices and {} bias vectors for dims {dims:?}",
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..self.weights.len() {
            if self.weights[l].shape() != (dims[l + 1], dims[l]) || self.biases[l].len() != dims[l + 1] {
                return Err(Error::ShapeMismatch(format!("layer {l} does not match dims {dims:?}")));
            }
        }
        let finite = self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Parameter gradients, shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Intermediate values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Matrix,
    /// Pre-activation of every layer; the last one is the raw embedding.
    pre: Vec<Matrix>,
    /// ReLU outputs of the hidden layers.
    hidden: Vec<Matrix>,
    embeddings: EmbeddingBatch,
}

impl ForwardCache {
    /// The embedding before normalization.
    pub fn raw_output(&self) -> &Matrix {
        self.pre.last().unwrap_or(&self.inputs)
    }

    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }
}

fn affine(a: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut z = a.matmul_t(w)?;
    for i in 0..z.rows() {
        for (v, bias) in z.row_mut(i).iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(z)
}

pub fn mlp_forward(params: &MlpParams, inputs: &Matrix) -> Result<(EmbeddingBatch, ForwardCache)> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let layers = params.num_layers();
    let mut pre = Vec::with_capacity(layers);
    let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
    for l in 0..layers {
        let a = if l == 0 { inputs } else { &hidden[l - 1] };
        let z = affine(a, &params.weights[l], &params.biases[l])?;
        if l + 1 < layers {
            let mut h = z.clone();
            h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            hidden.push(h);
        }
        pre.push(z);
    }
    let raw = pre.last().unwrap_or(inputs);
    let embeddings = EmbeddingBatch::normalize(raw)?;
    let cache = ForwardCache {
        inputs: inputs.clone(),
        pre,
        hidden,
        embeddings: embeddings.clone(),
    };
    Ok((embeddings, cache))
}

/// Backward pass given the gradient with respect to the unit embeddings.
pub fn mlp_backward(params: &MlpParams, cache: &ForwardCache, grad_embeddings: &Matrix) -> Result<MlpGrads> {
    let grad_raw = cache.embeddings.pull_back(grad_embeddings)?;
    mlp_backward_raw(params, cache, &grad_raw)
}

/// Backward pass given the gradient with respect to the pre-normalization output.
pub fn mlp_backward_raw(params: &MlpParams, cache: &ForwardCache, grad_raw: &Matrix) -> Result<MlpGrads> {
    let layers = params.num_layers();
    if cache.pre.len() != layers || grad_raw.shape() != cache.raw_output().shape() {
        return Err(Error::ShapeMismatch(format!(
            "gradient {:?} does not match cached output {:?}",
            grad_raw.shape(),
            cache.raw_output().shape()
        )));
    }
    let mut grads = params.zeros_like();
    let mut delta = grad_raw.clone();
    for l in (0..layers).rev() {
        let a = if l == 0 { &cache.inputs } else { &cache.hidden[l - 1] };
        grads.weights[l] = delta.t_matmul(a)?;
        let gb = &mut grads.biases[l];
        for i in 0..delta.rows() {
            for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        if l > 0 {
            let mut prev = delta.matmul(&params.weights[l])?;
            for (g, z) in prev.as_mut_slice().iter_mut().zip(cache.pre[l - 1].as_slice()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dot, norm};

    fn random_inputs(seed: u64, n: usize, d: usize) -> Matrix {
        let mut rng = stream_rng(seed, 99);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_network_passes_unit_inputs_through() {
        let params = MlpParams::init(&[4], 0).unwrap();
        let x = EmbeddingBatch::normalize(&random_inputs(1, 3, 4)).unwrap();
        let (emb, _) = mlp_forward(&params, x.matrix()).unwrap();
        for (a, b) in emb.matrix().as_slice().iter().zip(x.matrix().as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_weights_output_normalized_bias() {
        let mut params = MlpParams::init(&[3, 5, 2], 0).unwrap();
        for w in &mut params.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
        params.biases[0] = vec![1.0; 5];
        params.biases[1] = vec![3.0, 4.0];
        let (emb, _) = mlp_forward(&params, &random_inputs(2, 4, 3)).unwrap();
        for i in 0..4 {
            assert!((emb.row(i)[0] - 0.6).abs() < 1e-15 && (emb.row(i)[1] - 0.8).abs() < 1e-15);
        }
    }

    #[test]
    fn outputs_are_unit_norm() {
        let params = MlpParams::init(&[8, 16, 4], 3).unwrap();
        let (emb, _) = mlp_forward(&params, &random_inputs(4, 5, 8)).unwrap();
        for i in 0..5 {
            assert!((norm(emb.row(i)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = MlpParams::init(&[8, 16, 16, 4], 3).unwrap();
        let x = random_inputs(4, 5, 8);
        let (a, _) = mlp_forward(&params, &x).unwrap();
        let (b, _) = mlp_forward(&params, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gradient() {
        let params = MlpParams::init(&[6, 7, 3], 1).unwrap();
        let (_, cache) = mlp_forward(&params, &random_inputs(5, 4, 6)).unwrap();
        let g = mlp_backward(&params, &cache, &Matrix::zeros(4, 3)).unwrap();
        assert_eq!(g, params.zeros_like());
    }

    #[test]
    fn single_linear_layer_gradient_is_input_sum() {
        let params = MlpParams::init(&[3, 2], 1).unwrap();
        let x = random_inputs(6, 5, 3);
        let (_, cache) = mlp_forward(&params, &x).unwrap();
        let ones = Matrix::from_vec(5, 2, vec![1.0; 10]).unwrap();
        let g = mlp_backward_raw(&params, &cache, &ones).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                let want: f64 = (0..5).map(|i| x.get(i, c)).sum();
                assert!((g.weights[0].get(r, c) - want).abs() < 1e-12);
            }
        }
        assert_eq!(g.biases[0], vec![5.0, 5.0]);
    }

    #[test]
    fn normalization_gradient_is_tangent() {
        let params = MlpParams::init(&[6, 8, 4], 2).unwrap();
        let (emb, cache) = mlp_forward(&params, &random_inputs(8, 7, 6)).unwrap();
        let g = random_inputs(9, 7, 4);
        let back = cache.embeddings.pull_back(&g).unwrap();
        for i in 0..7 {
            assert!(dot(back.row(i), emb.row(i)).abs() < 1e-10);
        }
    }

    #[test]
    fn mismatched_inputs() {
        let params = MlpParams::init(&[6, 4], 2).unwrap();
        assert!(matches!(
            mlp_forward(&params, &Matrix::zeros(2, 5)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn init_respects_glorot_bound() {
        let params = MlpParams::init(&[10, 30], 5).unwrap();
        let bound = (6.0f64 / 40.0).sqrt();
        assert!(params.weights[0].as_slice().iter().all(|v| v.abs() <= bound));
        assert!(params.biases[0].iter().all(|&b| b == 0.0));
        assert_eq!(params, MlpParams::init(&[10, 30], 5).unwrap());
    }
}
