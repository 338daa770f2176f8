use crate::error::{Error, Result};

/// Below this, the batch carries no usable teacher confidence and every sample
/// gets `m_min`.
const A_MAX_EPS: f64 = 1e-7;

/// How the normalizing `a_max` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AMaxMode {
    /// Largest clamped teacher cosine in the current batch.
    #[default]
    Batch,
    /// A fixed value, e.g. the maximum over the whole training set.
    Global(f64),
}

/// Per-sample additive angular margins derived from teacher cosines.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSampleMargins {
    pub margins: Vec<f64>,
    /// Teacher cosines after clamping negatives to zero.
    pub a: Vec<f64>,
    pub a_max: f64,
    pub m_min: f64,
    pub m_max: f64,
}

impl PerSampleMargins {
    /// Every sample gets margin `m`.
    pub fn constant(m: f64, n: usize) -> Self {
        Self {
            margins: vec![m; n],
            a: vec![0.0; n],
            a_max: 0.0,
            m_min: m,
            m_max: m,
        }
    }

    pub fn len(&self) -> usize {
        self.margins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margins.is_empty()
    }
}

/// `m_i = (m_max − m_min) / a_max · a_i + m_min`, with `a_max` the batch maximum.
pub fn per_sample_margins(teacher_cos: &[f64], m_min: f64, m_max: f64) -> Result<PerSampleMargins> {
    per_sample_margins_with(teacher_cos, m_min, m_max, AMaxMode::Batch)
}

pub fn per_sample_margins_with(
    teacher_cos: &[f64],
    m_min: f64,
    m_max: f64,
    mode: AMaxMode,
) -> Result<PerSampleMargins> {
    if teacher_cos.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if !(m_min >= 0.0 && m_min <= m_max && m_max.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "margin bounds must satisfy 0 <= m_min <= m_max, got [{m_min}, {m_max}]"
        )));
    }
    let a: Vec<f64> = teacher_cos.iter().map(|&c| c.max(0.0)).collect();
    // sequential fold keeps the reduction order fixed
    let a_max = match mode {
        AMaxMode::Batch => a.iter().copied().fold(0.0, f64::max),
        AMaxMode::Global(v) => v.max(0.0),
    };
    let margins = if a_max < A_MAX_EPS {
        vec![m_min; a.len()]
    } else {
        let span = m_max - m_min;
        a.iter()
            .map(|&ai| {
                if ai >= a_max {
                    m_max
                } else {
                    (span * (ai / a_max) + m_min).clamp(m_min, m_max)
                }
            })
            .collect()
    };
    Ok(PerSampleMargins {
        margins,
        a,
        a_max,
        m_min,
        m_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        let m = per_sample_margins(&[0.9, 0.0, 0.45], 0.2, 0.5).unwrap();
        assert_eq!(m.a_max, 0.9);
        assert_eq!(m.margins[0], 0.5);
        assert_eq!(m.margins[1], 0.2);
        assert!((m.margins[2] - 0.35).abs() < 1e-15);
    }

    #[test]
    fn negative_cosines_floor_at_m_min() {
        let m = per_sample_margins(&[-0.4, 0.5], 0.2, 0.5).unwrap();
        assert_eq!(m.margins[0], 0.2);
        assert_eq!(m.a[0], 0.0);
    }

    #[test]
    fn degenerate_batch_uses_m_min() {
        let m = per_sample_margins(&[-0.3, 0.0, 1e-9], 0.2, 0.5).unwrap();
        assert!(m.margins.iter().all(|&v| v == 0.2));
    }

    #[test]
    fn errors() {
        assert!(matches!(per_sample_margins(&[], 0.2, 0.5), Err(Error::EmptyBatch)));
        assert!(matches!(
            per_sample_margins(&[0.5], 0.6, 0.5),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn global_mode_uses_supplied_a_max() {
        let m = per_sample_margins_with(&[0.45], 0.2, 0.5, AMaxMode::Global(0.9)).unwrap();
        assert!((m.margins[0] - 0.35).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(a in prop::collection::vec(-1.0f64..1.0, 1..64)) {
            let m = per_sample_margins(&a, 0.2, 0.5).unwrap();
            for &v in &m.margins {
                prop_assert!((0.2..=0.5).contains(&v));
            }
            let mut idx: Vec<usize> = (0..a.len()).collect();
            idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
            for w in idx.windows(2) {
                prop_assert!(m.margins[w[0]] <= m.margins[w[1]]);
            }
            if m.a_max >= 1e-7 {
                let top = a.iter().copied().fold(f64::MIN, f64::max);
                let i = a.iter().position(|&v| v == top).unwrap();
                prop_assert_eq!(m.margins[i], 0.5);
            }
        }
    }
}
