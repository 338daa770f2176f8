use std::fs;
use std::path::PathBuf;

use margindistill::cli::{build_protocols, ProtocolArgs};
use margindistill::data::{class_directions, generate_synthetic, IdentificationProtocol};
use margindistill::evaluation::{evaluate, gap_report, rank1_from_embeddings, MetricsReport};
use margindistill::network::{mlp_forward, teacher_dims};
use margindistill::training::{train_teacher, Method, NoObserver, StepInfo, TrainConfig};
use margindistill::{cosine_logits, EmbeddingBatch, Matrix};
use proptest::prelude::*;

#[test]
fn preset_is_separable_by_nearest_direction() {
    let ds = generate_synthetic(64, 200, 128, 0.3, 1).unwrap();
    let dirs = class_directions(64, 128, 1).unwrap();
    let mut hits = 0;
    for i in 0..ds.len() {
        let x = ds.inputs.row(i);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for c in 0..64 {
            let s: f64 = x.iter().zip(dirs.row(c)).map(|(a, b)| a * b).sum();
            if s > best.0 {
                best = (s, c);
            }
        }
        hits += usize::from(best.1 == ds.labels[i]);
    }
    let acc = hits as f64 / ds.len() as f64;
    assert!(acc > 0.99, "nearest-direction accuracy {acc}");
}

#[test]
fn teacher_fits_noiseless_classes() {
    let ds = generate_synthetic(8, 20, 16, 0.0, 4).unwrap();
    let mut cfg = TrainConfig::new(Method::ArcFace, vec![16, 32, 8]).with_iterations(300).with_seed(4);
    cfg.batch_size = 32;
    let ck = train_teacher(&cfg, &ds, &mut NoObserver).unwrap();
    let (emb, _) = mlp_forward(&ck.params, &ds.inputs).unwrap();
    let logits = cosine_logits(&emb, &ck.centers).unwrap();
    for &i in &ds.train_indices() {
        let row = logits.row(i);
        let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(best, ds.labels[i], "sample {i}");
    }
}

#[test]
fn teacher_loss_drops_tenfold_on_preset() {
    let ds = generate_synthetic(64, 200, 128, 0.3, 1).unwrap();
    let cfg = TrainConfig::new(Method::ArcFace, teacher_dims(128, 64)).with_iterations(2000).with_seed(1);
    let mut losses = Vec::new();
    let mut record = |info: &StepInfo<'_>| {
        losses.push(info.loss);
        Ok(())
    };
    train_teacher(&cfg, &ds, &mut record).unwrap();
    let window = 20;
    let first = losses[..window].iter().sum::<f64>() / window as f64;
    let last = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    assert!(last * 10.0 <= first, "loss went from {first} to {last}");
}

fn random_unit(rows: usize, dim: usize, seed: u64) -> EmbeddingBatch {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    EmbeddingBatch::normalize(&Matrix::from_vec(rows, dim, data).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn more_distractors_never_help(probes in 1usize..12, extra in 0usize..60, seed in any::<u64>()) {
        let total = 2 * probes + extra;
        let emb = random_unit(total, 4, seed);
        let mut last = f64::INFINITY;
        for k in 0..=extra {
            let protocol = IdentificationProtocol {
                probes: (0..probes).collect(),
                gallery: (probes..2 * probes).collect(),
                distractors: (2 * probes..2 * probes + k).collect(),
            };
            let r = rank1_from_embeddings(&emb, &protocol).unwrap();
            prop_assert!(r <= last);
            last = r;
        }
    }
}

#[test]
fn metrics_ignore_positive_rescaling() {
    let ds = generate_synthetic(12, 30, 24, 0.3, 2).unwrap();
    let mut cfg = TrainConfig::new(Method::ArcFace, vec![24, 32, 16]).with_iterations(200).with_seed(2);
    cfg.batch_size = 32;
    let ck = train_teacher(&cfg, &ds, &mut NoObserver).unwrap();
    let (ver, ident) = build_protocols(&ds, &ProtocolArgs::default()).unwrap();
    let base = evaluate(&ck, &ds, &ver, &ident, "m", 0).unwrap();
    for c in [0.25, 3.7, 1e3] {
        // the last layer is linear, so scaling it scales the raw embedding
        let mut scaled = ck.clone();
        let last = scaled.params.weights.len() - 1;
        scaled.params.weights[last].as_mut_slice().iter_mut().for_each(|w| *w *= c);
        scaled.params.biases[last].iter_mut().for_each(|b| *b *= c);
        let r = evaluate(&scaled, &ds, &ver, &ident, "m", 0).unwrap();
        assert!((r.verification_accuracy - base.verification_accuracy).abs() < 1e-12, "scale {c}");
        assert_eq!(r.rank1_accuracy, base.rank1_accuracy, "scale {c}");
        assert!((r.best_threshold - base.best_threshold).abs() < 1e-9, "scale {c}");
    }
}

fn report(method: &str, ver: f64, thr: f64, rank1: f64) -> MetricsReport {
    MetricsReport {
        method: method.into(),
        verification_accuracy: ver,
        best_threshold: thr,
        rank1_accuracy: rank1,
        seed: 3,
        verification_protocol: 11,
        identification_protocol: 22,
        timing: None,
    }
}

#[test]
fn gap_csv_matches_golden_file() {
    let teacher = report("teacher", 0.995, 0.41, 0.96875);
    let students = [
        report("arcface", 0.9875, 0.375, 0.875),
        report("margin", 0.99, 0.3875, 0.90625),
        report("triplet-l2", 0.98, 0.5, 0.8125),
        report("triplet-cos", 0.9825, 0.45, 0.84375),
        report("angular", 0.985, 0.4, 0.875),
        report("temp-kd", 0.97, 0.35, 0.75),
    ];
    let csv = gap_report(&teacher, &students).unwrap().to_csv();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/gap_report.csv");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, &csv).unwrap();
    }
    let golden = fs::read_to_string(&path).unwrap();
    assert_eq!(csv, golden);
}
