//! Synthetic hypersphere clusters, evaluation protocols and dataset files.

mod io;
mod protocol;

pub use io::{dataset_load, dataset_save, DATASET_VERSION};
pub use protocol::{
    build_identification, build_verification_pairs, IdentificationProtocol, Pair, VerificationProtocol,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::l2_normalize;
use crate::matrix::Matrix;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, splits: Vec<Split>, seed: u64) -> Result<Self> {
        let ds = Self {
            inputs,
            labels,
            classes,
            splits,
            seed,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.inputs.rows();
        if self.labels.len() != m || self.splits.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{m} inputs, {} labels, {} split tags",
                self.labels.len(),
                self.splits.len()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.classes,
            });
        }
        let mut counts = vec![0usize; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        if let Some(c) = counts.iter().position(|&c| c < 2) {
            return Err(Error::InsufficientSamples(format!("class {c} has fewer than 2 samples")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        self.indices(Split::Eval)
    }
}

/// Unit class directions drawn from normalized isotropic Gaussians.
pub fn class_directions(n_classes: usize, d_in: usize, seed: u64) -> Result<Matrix> {
    let mut rng = stream_rng(seed, streams::DATA_CENTERS);
    let mut data = Vec::with_capacity(n_classes * d_in);
    for _ in 0..n_classes {
        let v: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(&mut rng)).collect();
        data.extend(l2_normalize(&v)?);
    }
    Matrix::from_vec(n_classes, d_in, data)
}

/// Number of evaluation samples per class under the 80/20 split.
pub fn eval_per_class(per_class: usize) -> usize {
    (per_class / 5).clamp(1, per_class - 1)
}

/// Each sample is `normalize(direction + σ/√D_in · ε)` with `ε ~ N(0, I)`, so
/// `noise_sigma` is the expected length of the perturbation. Samples are laid
/// out class by class; the last fifth of each class is tagged for evaluation.
pub fn generate_synthetic(
    n_classes: usize,
    per_class: usize,
    d_in: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || per_class < 2 || d_in < 2 || !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "need classes >= 2, per_class >= 2, dim >= 2, noise >= 0; got {n_classes}, {per_class}, {d_in}, {noise_sigma}"
        )));
    }
    let directions = class_directions(n_classes, d_in, seed)?;
    let coord_sigma = noise_sigma / (d_in as f64).sqrt();
    let mut rng = stream_rng(seed, streams::DATA_NOISE);
    let m = n_classes * per_class;
    let mut inputs = Matrix::zeros(m, d_in);
    let mut labels = Vec::with_capacity(m);
    let mut splits = Vec::with_capacity(m);
    let n_eval = eval_per_class(per_class);
    let mut v = vec![0.0; d_in];
    for c in 0..n_classes {
        for k in 0..per_class {
            for (x, d) in v.iter_mut().zip(directions.row(c)) {
                let e: f64 = StandardNormal.sample(&mut rng);
                *x = d + coord_sigma * e;
            }
            let i = c * per_class + k;
            inputs.row_mut(i).copy_from_slice(&l2_normalize(&v)?);
            labels.push(c);
            splits.push(if k >= per_class - n_eval { Split::Eval } else { Split::Train });
        }
    }
    Dataset::new(inputs, labels, n_classes, splits, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dot;

    #[test]
    fn zero_noise_reproduces_directions() {
        let ds = generate_synthetic(4, 5, 8, 0.0, 3).unwrap();
        let dirs = class_directions(4, 8, 3).unwrap();
        for i in 0..ds.len() {
            for (a, b) in ds.inputs.row(i).iter().zip(dirs.row(ds.labels[i])) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let a = generate_synthetic(6, 10, 16, 0.3, 42).unwrap();
        let b = generate_synthetic(6, 10, 16, 0.3, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(6, 10, 16, 0.3, 43).unwrap();
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn split_is_eighty_twenty_per_class() {
        let ds = generate_synthetic(3, 10, 4, 0.1, 1).unwrap();
        for c in 0..3 {
            let eval = (0..ds.len())
                .filter(|&i| ds.labels[i] == c && ds.splits[i] == Split::Eval)
                .count();
            assert_eq!(eval, 2);
        }
        assert_eq!(eval_per_class(2), 1);
        assert_eq!(eval_per_class(200), 40);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(generate_synthetic(1, 5, 4, 0.1, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(generate_synthetic(3, 1, 4, 0.1, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(generate_synthetic(3, 5, 1, 0.1, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(generate_synthetic(3, 5, 4, -0.1, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_noise_geometry() {
        let d_in = 256;
        let ds = generate_synthetic(40, 2, d_in, 0.0, 9).unwrap();
        // within-class cosine is exactly one
        for c in 0..40 {
            let (a, b) = (ds.inputs.row(2 * c), ds.inputs.row(2 * c + 1));
            assert!((dot(a, b) - 1.0).abs() < 1e-12);
        }
        let mut sum = 0.0;
        let mut count = 0;
        for a in 0..40 {
            for b in a + 1..40 {
                sum += dot(ds.inputs.row(2 * a), ds.inputs.row(2 * b)).abs();
                count += 1;
            }
        }
        assert!(sum / (count as f64) < 3.0 / (d_in as f64).sqrt());
    }
}
