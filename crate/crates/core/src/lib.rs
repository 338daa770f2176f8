//! Margin-based softmax losses and teacher–student distillation on the
//! hypersphere.
//!
//! The crate covers the unified `(m1, m2, m3, s)` margin softmax family, margin
//! distillation (frozen teacher class centers plus per-sample ArcFace margins
//! driven by teacher confidence), three baseline distillation losses, a small
//! MLP embedder with manual backpropagation, synthetic data, and verification /
//! rank-1 identification evaluation.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod losses;
pub mod matrix;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{cosine_logits, l2_normalize, safe_arccos, ClassCenters, CosineLogits, EmbeddingBatch};
pub use matrix::Matrix;
