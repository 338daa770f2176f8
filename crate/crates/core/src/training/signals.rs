use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{cosine_logits, l2_normalize, norm, ClassCenters, CosineLogits, EmbeddingBatch};
use crate::network::{mlp_forward, Checkpoint, Role};

/// Everything the fixed teacher contributes to distillation, one row per
/// dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSignals {
    /// Cosine between each sample's teacher embedding and its own class center.
    pub a: Vec<f64>,
    pub embeddings: EmbeddingBatch,
    pub logits: CosineLogits,
}

impl TeacherSignals {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

pub fn precompute_teacher_signals(teacher: &Checkpoint, ds: &Dataset) -> Result<TeacherSignals> {
    if teacher.centers.classes() != ds.classes {
        return Err(Error::DimensionMismatch(format!(
            "teacher has {} class centers, dataset has {} classes",
            teacher.centers.classes(),
            ds.classes
        )));
    }
    let (embeddings, _) = mlp_forward(&teacher.params, &ds.inputs)?;
    let logits = cosine_logits(&embeddings, &teacher.centers)?;
    let a = ds.labels.iter().enumerate().map(|(i, &y)| logits.get(i, y)).collect();
    Ok(TeacherSignals { a, embeddings, logits })
}

/// Copies the teacher's class centers into a frozen set for a student with
/// embedding dimension `student_dim`.
pub fn transfer_centers(teacher: &Checkpoint, student_dim: usize) -> Result<ClassCenters> {
    if teacher.role != Role::Teacher {
        return Err(Error::MissingTeacher(format!(
            "center transfer needs a TEACHER checkpoint, got {:?}",
            teacher.role
        )));
    }
    let src = &teacher.centers;
    if src.dim() != student_dim {
        return Err(Error::DimensionMismatch(format!(
            "teacher embedding dimension {} differs from student dimension {student_dim}",
            src.dim()
        )));
    }
    // Stored columns are already unit length; only drifted ones are rebuilt so
    // a clean transfer stays bit-identical to the teacher.
    let mut unit = src.matrix().clone();
    for j in 0..src.classes() {
        let col = src.center(j);
        let len = norm(&col);
        if (len - 1.0).abs() > 1e-12 {
            for (r, v) in l2_normalize(&col)?.into_iter().enumerate() {
                unit.set(r, j, v);
            }
        }
    }
    ClassCenters::from_parts(unit, src.norms().to_vec(), true)
}
