//! Pair verification, rank-1 identification and teacher–student comparison tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, IdentificationProtocol, VerificationProtocol};
use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingBatch};
use crate::network::{mlp_forward, Checkpoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub verification_accuracy: f64,
    pub best_threshold: f64,
    pub rank1_accuracy: f64,
    pub seed: u64,
    /// Fingerprints of the protocols the report was computed on.
    pub verification_protocol: u64,
    pub identification_protocol: u64,
    /// Wall-clock seconds; left out unless requested so reports stay byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<f64>,
}

/// Unit embeddings of every dataset row.
pub fn embed_dataset(model: &Checkpoint, ds: &Dataset) -> Result<EmbeddingBatch> {
    Ok(mlp_forward(&model.params, &ds.inputs)?.0)
}

/// Best accuracy over all thresholds `t` where a pair is called "same" iff
/// `score >= t`, with the smallest such threshold. Candidates are −1, +1 and
/// the midpoints between consecutive distinct scores.
pub fn best_threshold(scores: &[(f64, bool)]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::EmptyProtocol);
    }
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|&(s, same)| (s.clamp(-1.0, 1.0), same)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total = sorted.len() as f64;
    let positives = sorted.iter().filter(|p| p.1).count();
    // threshold −1: everything is "same"
    let mut correct = positives;
    let mut best = (correct, -1.0);
    let mut k = 0;
    while k < sorted.len() {
        // move every pair with this score below the threshold
        let s = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == s {
            if sorted[k].1 {
                correct -= 1;
            } else {
                correct += 1;
            }
            k += 1;
        }
        let t = if k < sorted.len() { 0.5 * (s + sorted[k].0) } else { 1.0 };
        // a score of exactly +1 can never fall below the +1 sentinel
        if t <= -1.0 || (k == sorted.len() && s >= 1.0) {
            continue;
        }
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok((best.0 as f64 / total, best.1))
}

/// Accuracy of a fixed threshold, as used by the sweep.
pub fn accuracy_at(scores: &[(f64, bool)], threshold: f64) -> f64 {
    let hits = scores.iter().filter(|&&(s, same)| (s >= threshold) == same).count();
    hits as f64 / scores.len() as f64
}

pub fn pair_scores(emb: &EmbeddingBatch, protocol: &VerificationProtocol) -> Vec<(f64, bool)> {
    protocol
        .pairs
        .iter()
        .map(|p| (dot(emb.row(p.a), emb.row(p.b)), p.same))
        .collect()
}

/// `(accuracy, best_threshold)` of a model on a pair protocol.
pub fn verification_accuracy(model: &Checkpoint, ds: &Dataset, protocol: &VerificationProtocol) -> Result<(f64, f64)> {
    if protocol.pairs.is_empty() {
        return Err(Error::EmptyProtocol);
    }
    let emb = embed_dataset(model, ds)?;
    best_threshold(&pair_scores(&emb, protocol))
}

/// Fraction of probes whose own gallery entry scores strictly higher than
/// every other gallery entry and distractor.
pub fn rank1_from_embeddings(emb: &EmbeddingBatch, protocol: &IdentificationProtocol) -> Result<f64> {
    if protocol.probes.is_empty() {
        return Err(Error::EmptyProtocol);
    }
    if protocol.gallery.len() != protocol.probes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probes, {} gallery entries",
            protocol.probes.len(),
            protocol.gallery.len()
        )));
    }
    let mut hits = 0usize;
    for (i, &probe) in protocol.probes.iter().enumerate() {
        let x = emb.row(probe);
        let own = dot(x, emb.row(protocol.gallery[i]));
        let beaten = protocol
            .gallery
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &g)| g)
            .chain(protocol.distractors.iter().copied())
            .any(|c| dot(x, emb.row(c)) >= own);
        if !beaten {
            hits += 1;
        }
    }
    Ok(hits as f64 / protocol.probes.len() as f64)
}

pub fn rank1_identification(model: &Checkpoint, ds: &Dataset, protocol: &IdentificationProtocol) -> Result<f64> {
    if protocol.probes.is_empty() {
        return Err(Error::EmptyProtocol);
    }
    rank1_from_embeddings(&embed_dataset(model, ds)?, protocol)
}

/// Both metrics for one model, tagged with `method` and `seed`.
pub fn evaluate(
    model: &Checkpoint,
    ds: &Dataset,
    verification: &VerificationProtocol,
    identification: &IdentificationProtocol,
    method: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let emb = embed_dataset(model, ds)?;
    let (verification_accuracy, best_threshold) = best_threshold(&pair_scores(&emb, verification))?;
    let rank1_accuracy = rank1_from_embeddings(&emb, identification)?;
    Ok(MetricsReport {
        method: method.to_string(),
        verification_accuracy,
        best_threshold,
        rank1_accuracy,
        seed,
        verification_protocol: verification.fingerprint(),
        identification_protocol: identification.fingerprint(),
        timing: None,
    })
}

/// Name of the student method the deltas are measured against.
pub const BASELINE_METHOD: &str = "arcface";

pub const GAP_CSV_HEADER: &str = "method,verification_accuracy,best_threshold,rank1_accuracy,delta_vs_teacher_rank1,delta_vs_baseline_rank1,seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub method: String,
    pub verification_accuracy: f64,
    pub best_threshold: f64,
    pub rank1_accuracy: f64,
    pub delta_vs_teacher_rank1: f64,
    /// Missing when no baseline student was evaluated.
    pub delta_vs_baseline_rank1: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
}

/// Teacher and students side by side, sorted by rank-1 accuracy (descending,
/// ties keep input order with the teacher first).
pub fn gap_report(teacher: &MetricsReport, students: &[MetricsReport]) -> Result<GapReport> {
    for s in students {
        if s.verification_protocol != teacher.verification_protocol
            || s.identification_protocol != teacher.identification_protocol
        {
            return Err(Error::ProtocolMismatch(format!(
                "report {:?} (seed {}) was evaluated on different protocols than the teacher",
                s.method, s.seed
            )));
        }
    }
    let baseline = students.iter().find(|s| s.method == BASELINE_METHOD).map(|s| s.rank1_accuracy);
    let mut rows: Vec<GapRow> = std::iter::once(teacher)
        .chain(students)
        .map(|r| GapRow {
            method: r.method.clone(),
            verification_accuracy: r.verification_accuracy,
            best_threshold: r.best_threshold,
            rank1_accuracy: r.rank1_accuracy,
            delta_vs_teacher_rank1: r.rank1_accuracy - teacher.rank1_accuracy,
            delta_vs_baseline_rank1: baseline.map(|b| r.rank1_accuracy - b),
            seed: r.seed,
        })
        .collect();
    rows.sort_by(|a, b| b.rank1_accuracy.total_cmp(&a.rank1_accuracy));
    Ok(GapReport { rows })
}

impl GapReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(GAP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let baseline = r.delta_vs_baseline_rank1.map(|d| d.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method,
                r.verification_accuracy,
                r.best_threshold,
                r.rank1_accuracy,
                r.delta_vs_teacher_rank1,
                baseline,
                r.seed
            )
            .unwrap();
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>9} {:>9} {:>10} {:>11} {:>6}\n",
            "method", "verif", "thresh", "rank1", "d_teacher", "d_baseline", "seed"
        );
        for r in &self.rows {
            let baseline = r
                .delta_vs_baseline_rank1
                .map(|d| format!("{:+.4}", d))
                .unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>+10.4} {:>11} {:>6}",
                r.method,
                r.verification_accuracy,
                r.best_threshold,
                r.rank1_accuracy,
                r.delta_vs_teacher_rank1,
                baseline,
                r.seed
            )
            .unwrap();
        }
        out
    }
}
