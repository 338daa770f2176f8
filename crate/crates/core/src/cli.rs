//! `margindistill <gen-data|train-teacher|distill|eval|compare>`.
//!
//! Every command takes its parameters from flags and, optionally, from a flat
//! JSON file given with `--config`. The file must carry `"version": 1`, may
//! only use the command's own keys (flag names with `_` for `-`), and loses to
//! any flag given on the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    build_identification, build_verification_pairs, dataset_load, dataset_save, generate_synthetic, Dataset,
    IdentificationProtocol, VerificationProtocol,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, gap_report, MetricsReport};
use crate::losses::{MarginSpec, DEFAULT_M_MAX, DEFAULT_M_MIN, DEFAULT_SCALE};
use crate::network::{checkpoint_load, checkpoint_save, Checkpoint, Role, STUDENT_HIDDEN, TEACHER_HIDDEN};
use crate::training::{
    distill_student, train_teacher, Method, MetricsWriter, TrainConfig, DEFAULT_BATCH, DEFAULT_ITERATIONS,
    DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_TEMPERATURE, DEFAULT_WEIGHT_DECAY,
};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_EMBEDDING_DIM: usize = 64;
pub const DEFAULT_PAIRS: usize = 3000;
pub const DEFAULT_PROBE_IDS: usize = 100;
pub const DEFAULT_DISTRACTORS: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "margindistill", version, about = "Margin-based distillation of hypersphere embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic `.mdds` dataset.
    GenData(GenDataArgs),
    /// Train an ArcFace teacher.
    TrainTeacher(TeacherArgs),
    /// Train a student with one of the distillation methods.
    Distill(DistillArgs),
    /// Evaluate a checkpoint on verification pairs and rank-1 identification.
    Eval(EvalArgs),
    /// Train a teacher and every student method for several seeds and tabulate.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub version: Option<u32>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub version: Option<u32>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration metrics (JSON lines); defaults to `<out>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    /// Additive angular margin of the ArcFace loss.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Hidden layer widths, e.g. `256,256`.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub version: Option<u32>,
    /// arcface, margin, triplet-l2, triplet-cos, angular or temp-kd.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Teacher checkpoint; required by every method except arcface.
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub m_min: Option<f64>,
    #[arg(long)]
    pub m_max: Option<f64>,
    /// Use the training-set maximum teacher cosine instead of the batch maximum.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub global_a_max: Option<bool>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub kd_hard_weight: Option<f64>,
    #[arg(long)]
    pub lambda_angular: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolArgs {
    /// Positive and negative verification pairs (each).
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub probe_ids: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    /// Seed of the protocol draw; defaults to the dataset seed.
    #[arg(long)]
    pub protocol_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub version: Option<u32>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub probe_ids: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub protocol_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(skip)]
    #[serde(skip_serializing)]
    pub version: Option<u32>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory receiving checkpoints, per-seed reports and the tables.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of seeds.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// First seed; runs use `seed, seed + 1, …`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub teacher_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub student_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub probe_ids: Option<usize>,
    #[arg(long)]
    pub distractors: Option<usize>,
    #[arg(long)]
    pub protocol_seed: Option<u64>,
}

/// Overlays the flags on the config file named by `config`, if any.
pub fn compose<T>(flags: &T, config: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let as_value = |v: &T| serde_json::to_value(v).map_err(|e| Error::InvalidConfig(e.to_string()));
    let mut merged = match config {
        None => Value::Object(Default::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            match file.get("version").and_then(Value::as_u64) {
                Some(v) if v == u64::from(CONFIG_VERSION) => {}
                Some(v) => {
                    return Err(Error::InvalidConfig(format!(
                        "{}: unsupported config version {v}",
                        path.display()
                    )))
                }
                None => return Err(Error::InvalidConfig(format!("{}: missing \"version\" key", path.display()))),
            }
            // validates keys and types before the flags are layered on
            serde_json::from_value::<T>(file.clone())
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            file
        }
    };
    if let (Value::Object(base), Value::Object(over)) = (&mut merged, as_value(flags)?) {
        for (k, v) in over {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required")))
}

fn layer_dims(input: usize, hidden: &[usize], embedding: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(embedding);
    dims
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<String> {
    let a = compose(args, args.config.as_deref())?;
    let out = required(a.out, "out")?;
    let ds = generate_synthetic(
        a.classes.unwrap_or(64),
        a.per_class.unwrap_or(200),
        a.dim.unwrap_or(128),
        a.noise.unwrap_or(0.3),
        a.seed.unwrap_or(0),
    )?;
    dataset_save(&ds, &out)?;
    Ok(format!(
        "wrote {}: {} samples ({} train, {} eval), {} classes, dim {}, seed {}",
        out.display(),
        ds.len(),
        ds.train_indices().len(),
        ds.eval_indices().len(),
        ds.classes,
        ds.input_dim(),
        ds.seed
    ))
}

struct Common {
    seed: Option<u64>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    scale: Option<f64>,
    margin: Option<f64>,
}

fn base_config(method: Method, dims: Vec<usize>, c: &Common) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(method, dims)
        .with_iterations(c.iterations.unwrap_or(DEFAULT_ITERATIONS))
        .with_seed(c.seed.unwrap_or(0));
    cfg.batch_size = c.batch_size.unwrap_or(DEFAULT_BATCH);
    cfg.schedule.base_lr = c.lr.unwrap_or(DEFAULT_LR);
    cfg.momentum = c.momentum.unwrap_or(DEFAULT_MOMENTUM);
    cfg.weight_decay = c.weight_decay.unwrap_or(DEFAULT_WEIGHT_DECAY);
    cfg.margin = MarginSpec::new(1.0, c.margin.unwrap_or(0.5), 0.0, c.scale.unwrap_or(DEFAULT_SCALE))?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_with_metrics(
    metrics: &Path,
    f: impl FnOnce(&mut MetricsWriter) -> Result<Checkpoint>,
) -> Result<Checkpoint> {
    let mut writer = MetricsWriter::create(metrics)?;
    let ck = f(&mut writer)?;
    writer.finish()?;
    Ok(ck)
}

pub fn cmd_train_teacher(args: &TeacherArgs) -> Result<String> {
    let a = compose(args, args.config.as_deref())?;
    let data = required(a.data.clone(), "data")?;
    let out = required(a.out.clone(), "out")?;
    let metrics = a.metrics.clone().unwrap_or_else(|| sibling(&out, ".metrics.jsonl"));
    let common = Common {
        seed: a.seed,
        iterations: a.iterations,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        scale: a.scale,
        margin: a.margin,
    };
    let hidden = a.hidden.clone().unwrap_or_else(|| TEACHER_HIDDEN.to_vec());
    let embedding = a.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
    // check everything that does not need the dataset before loading it
    base_config(Method::ArcFace, layer_dims(2, &hidden, embedding), &common)?;
    let ds = dataset_load(&data)?;
    let cfg = base_config(Method::ArcFace, layer_dims(ds.input_dim(), &hidden, embedding), &common)?;
    let ck = train_with_metrics(&metrics, |w| train_teacher(&cfg, &ds, w))?;
    checkpoint_save(&ck, &out)?;
    Ok(format!(
        "wrote {} (TEACHER, dims {:?}, {} iterations, final loss {:.6})",
        out.display(),
        cfg.layer_dims,
        cfg.iterations,
        ck.meta.final_loss
    ))
}

pub fn cmd_distill(args: &DistillArgs) -> Result<String> {
    let a = compose(args, args.config.as_deref())?;
    let method: Method = required(a.method.clone(), "method")?.parse()?;
    let data = required(a.data.clone(), "data")?;
    let out = required(a.out.clone(), "out")?;
    let metrics = a.metrics.clone().unwrap_or_else(|| sibling(&out, ".metrics.jsonl"));
    let common = Common {
        seed: a.seed,
        iterations: a.iterations,
        batch_size: a.batch_size,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        scale: a.scale,
        margin: a.margin,
    };
    let hidden = a.hidden.clone().unwrap_or_else(|| STUDENT_HIDDEN.to_vec());
    let embedding = a.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
    let configure = |d_in: usize| -> Result<TrainConfig> {
        let mut cfg = base_config(method, layer_dims(d_in, &hidden, embedding), &common)?;
        cfg.m_min = a.m_min.unwrap_or(DEFAULT_M_MIN);
        cfg.m_max = a.m_max.unwrap_or(DEFAULT_M_MAX);
        cfg.global_a_max = a.global_a_max.unwrap_or(false);
        cfg.temperature = a.temperature.unwrap_or(DEFAULT_TEMPERATURE);
        cfg.kd_hard_weight = a.kd_hard_weight.unwrap_or(0.0);
        cfg.lambda_angular = a.lambda_angular.unwrap_or(1.0);
        cfg.validate()?;
        Ok(cfg)
    };
    configure(2)?;
    let teacher = match (&a.teacher, method.needs_teacher()) {
        (Some(path), true) => Some(checkpoint_load(path)?),
        (None, true) => return Err(Error::MissingTeacher(method.name().to_string())),
        (_, false) => None,
    };
    let ds = dataset_load(&data)?;
    let mut cfg = configure(ds.input_dim())?;
    cfg.triplet_classes = cfg.triplet_classes.min(ds.classes);
    let ck = train_with_metrics(&metrics, |w| distill_student(&cfg, &ds, teacher.as_ref(), w))?;
    checkpoint_save(&ck, &out)?;
    Ok(format!(
        "wrote {} (STUDENT, method {}, dims {:?}, final loss {:.6})",
        out.display(),
        method,
        cfg.layer_dims,
        ck.meta.final_loss
    ))
}

/// Protocol sizes: the requested counts, or the defaults shrunk to what the
/// dataset can supply.
pub fn build_protocols(
    ds: &Dataset,
    p: &ProtocolArgs,
) -> Result<(VerificationProtocol, IdentificationProtocol)> {
    let seed = p.protocol_seed.unwrap_or(ds.seed);
    let mut per_class = vec![0usize; ds.classes];
    for i in ds.eval_indices() {
        per_class[ds.labels[i]] += 1;
    }
    let eval: usize = per_class.iter().sum();
    let positives: usize = per_class.iter().map(|&e| e * e.saturating_sub(1) / 2).sum();
    let negatives = eval * eval.saturating_sub(1) / 2 - positives;
    let (n_pos, n_neg) = match p.pairs {
        Some(n) => (n, n),
        None => (DEFAULT_PAIRS.min(positives), DEFAULT_PAIRS.min(negatives)),
    };
    let verification = build_verification_pairs(ds, n_pos, n_neg, seed)?;
    let eligible = per_class.iter().filter(|&&e| e >= 2).count();
    let probe_ids = p.probe_ids.unwrap_or(DEFAULT_PROBE_IDS.min(eligible / 2).max(1));
    let distractors = match p.distractors {
        Some(n) => n,
        None => {
            // the smallest possible pool: the non-probe identities with the fewest samples
            let mut sizes: Vec<usize> = per_class.iter().copied().filter(|&e| e > 0).collect();
            sizes.sort_unstable();
            let pool: usize = sizes.iter().take(sizes.len().saturating_sub(probe_ids)).sum();
            DEFAULT_DISTRACTORS.min(pool)
        }
    };
    let identification = build_identification(ds, probe_ids, distractors, seed)?;
    Ok((verification, identification))
}

fn report_label(ck: &Checkpoint) -> String {
    match ck.role {
        Role::Teacher => "teacher".to_string(),
        Role::Student => ck.meta.method.clone(),
    }
}

pub const REPORT_CSV_HEADER: &str = "method,verification_accuracy,best_threshold,rank1_accuracy,seed";

pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.method, r.verification_accuracy, r.best_threshold, r.rank1_accuracy, r.seed
        )
        .unwrap();
    }
    out
}

fn report_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let a = compose(args, args.config.as_deref())?;
    let ck_path = required(a.checkpoint.clone(), "checkpoint")?;
    let data = required(a.data.clone(), "data")?;
    let out_json = required(a.out_json.clone(), "out-json")?;
    let out_csv = a.out_csv.clone().unwrap_or_else(|| out_json.with_extension("csv"));
    let ck = checkpoint_load(&ck_path)?;
    let ds = dataset_load(&data)?;
    let protocol = ProtocolArgs {
        pairs: a.pairs,
        probe_ids: a.probe_ids,
        distractors: a.distractors,
        protocol_seed: a.protocol_seed,
    };
    let (ver, ident) = build_protocols(&ds, &protocol)?;
    let report = evaluate(&ck, &ds, &ver, &ident, &report_label(&ck), ck.meta.seed)?;
    write_file(&out_json, report_json(&report)?)?;
    write_file(&out_csv, report_csv(std::slice::from_ref(&report)))?;
    Ok(format!(
        "{}: verification {:.4} (threshold {:.4}), rank-1 {:.4} over {} pairs / {} probes",
        report.method,
        report.verification_accuracy,
        report.best_threshold,
        report.rank1_accuracy,
        ver.pairs.len(),
        ident.probes.len()
    ))
}

/// Per-method mean and sample standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub seeds: usize,
    pub verification_mean: f64,
    pub verification_std: f64,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by method, in order of first appearance.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let group: Vec<&MetricsReport> = reports.iter().filter(|r| r.method == m).collect();
            let ver: Vec<f64> = group.iter().map(|r| r.verification_accuracy).collect();
            let r1: Vec<f64> = group.iter().map(|r| r.rank1_accuracy).collect();
            let (verification_mean, verification_std) = mean_std(&ver);
            let (rank1_mean, rank1_std) = mean_std(&r1);
            AggregateRow {
                method: m.to_string(),
                seeds: group.len(),
                verification_mean,
                verification_std,
                rank1_mean,
                rank1_std,
            }
        })
        .collect()
}

pub const AGGREGATE_CSV_HEADER: &str = "method,seeds,verification_mean,verification_std,rank1_mean,rank1_std";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.seeds, r.verification_mean, r.verification_std, r.rank1_mean, r.rank1_std
        )
        .unwrap();
    }
    out
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String> {
    let a = compose(args, args.config.as_deref())?;
    let data = required(a.data.clone(), "data")?;
    let out_dir = required(a.out_dir.clone(), "out-dir")?;
    let seeds = a.seeds.unwrap_or(1);
    if seeds == 0 {
        return Err(Error::InvalidConfig("--seeds must be at least 1".into()));
    }
    let first = a.seed.unwrap_or(1);
    let embedding = a.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM);
    let teacher_hidden = a.teacher_hidden.clone().unwrap_or_else(|| TEACHER_HIDDEN.to_vec());
    let student_hidden = a.student_hidden.clone().unwrap_or_else(|| STUDENT_HIDDEN.to_vec());
    let configure = |method: Method, hidden: &[usize], d_in: usize, seed: u64| -> Result<TrainConfig> {
        let common = Common {
            seed: Some(seed),
            iterations: a.iterations,
            batch_size: a.batch_size,
            lr: a.lr,
            momentum: None,
            weight_decay: None,
            scale: None,
            margin: None,
        };
        let mut cfg = base_config(method, layer_dims(d_in, hidden, embedding), &common)?;
        cfg.temperature = a.temperature.unwrap_or(DEFAULT_TEMPERATURE);
        cfg.validate()?;
        Ok(cfg)
    };
    for m in Method::ALL {
        configure(m, &student_hidden, 2, first)?;
    }
    let ds = dataset_load(&data)?;
    let protocol = ProtocolArgs {
        pairs: a.pairs,
        probe_ids: a.probe_ids,
        distractors: a.distractors,
        protocol_seed: a.protocol_seed,
    };
    let (ver, ident) = build_protocols(&ds, &protocol)?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut comparison = String::new();
    let mut text = String::new();
    let mut all = Vec::new();
    for seed in first..first + seeds {
        let dir = out_dir.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let context = |e: Error, what: &str| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("seed {seed}, {what}: {m}")),
            other => other,
        };
        let cfg = configure(Method::ArcFace, &teacher_hidden, ds.input_dim(), seed)?;
        let teacher = train_with_metrics(&dir.join("teacher.metrics.jsonl"), |w| train_teacher(&cfg, &ds, w))
            .map_err(|e| context(e, "teacher"))?;
        checkpoint_save(&teacher, &dir.join("teacher.mdck"))?;
        let t_report = evaluate(&teacher, &ds, &ver, &ident, "teacher", seed)?;
        write_file(&dir.join("teacher.json"), report_json(&t_report)?)?;
        let mut students = Vec::new();
        for method in Method::ALL {
            let mut cfg = configure(method, &student_hidden, ds.input_dim(), seed)?;
            cfg.triplet_classes = cfg.triplet_classes.min(ds.classes);
            let name = method.name();
            let ck = train_with_metrics(&dir.join(format!("{name}.metrics.jsonl")), |w| {
                distill_student(&cfg, &ds, Some(&teacher), w)
            })
            .map_err(|e| context(e, name))?;
            checkpoint_save(&ck, &dir.join(format!("{name}.mdck")))?;
            let r = evaluate(&ck, &ds, &ver, &ident, name, seed)?;
            write_file(&dir.join(format!("{name}.json")), report_json(&r)?)?;
            students.push(r);
        }
        let gap = gap_report(&t_report, &students)?;
        let csv = gap.to_csv();
        if comparison.is_empty() {
            comparison.push_str(&csv);
        } else {
            comparison.push_str(csv.split_once('\n').map_or("", |(_, rows)| rows));
        }
        writeln!(text, "seed {seed}\n{}", gap.to_text()).unwrap();
        all.push(t_report);
        all.extend(students);
    }
    let rows = aggregate(&all);
    write_file(&out_dir.join("comparison.csv"), &comparison)?;
    write_file(&out_dir.join("aggregate.csv"), aggregate_csv(&rows))?;
    writeln!(text, "mean ± sample std over {seeds} seed(s)").unwrap();
    for r in &rows {
        writeln!(
            text,
            "{:<12} verification {:.4} ± {:.4}   rank-1 {:.4} ± {:.4}",
            r.method, r.verification_mean, r.verification_std, r.rank1_mean, r.rank1_std
        )
        .unwrap();
    }
    Ok(text)
}

pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainTeacher(a) => cmd_train_teacher(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    }
}
