use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::optim::{lr_at, ParamSlot, SgdMomentum};
use super::signals::{precompute_teacher_signals, transfer_centers, TeacherSignals};
use super::{Method, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{cosine_logits, ClassCenters, EmbeddingBatch};
use crate::losses::{
    angular_distillation_loss, backprop_to_embeddings, margin_distillation_loss, per_sample_margins_with,
    temperature_kd_loss, triplet_distillation_loss, unified_margin_loss, AMaxMode, DistanceMetric, KdOptions,
    PerSampleMargins, TripletBatch,
};
use crate::matrix::Matrix;
use crate::network::{mlp_backward_raw, mlp_forward, Checkpoint, MlpParams, Role, TrainingMeta, CHECKPOINT_VERSION};
use crate::rng::{stream_rng, streams};

/// Losses above this abort the run.
const DIVERGENCE_LIMIT: f64 = 1e4;

/// State after one optimizer step.
pub struct StepInfo<'a> {
    /// Zero-based index of the step just taken.
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    /// Per-sample margins of the batch, for margin distillation.
    pub margins: Option<&'a PerSampleMargins>,
    pub params: &'a MlpParams,
    pub centers: &'a ClassCenters,
}

pub trait StepObserver {
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()>;
}

impl<F: FnMut(&StepInfo<'_>) -> Result<()>> StepObserver for F {
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        self(info)
    }
}

pub struct NoObserver;

impl StepObserver for NoObserver {
    fn on_step(&mut self, _: &StepInfo<'_>) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON object `{iteration, lr, loss}` per step.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

#[derive(Serialize)]
struct MetricsLine {
    iteration: usize,
    lr: f64,
    loss: f64,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

impl StepObserver for MetricsWriter {
    fn on_step(&mut self, info: &StepInfo<'_>) -> Result<()> {
        let line = MetricsLine {
            iteration: info.iteration,
            lr: info.lr,
            loss: info.loss,
        };
        serde_json::to_writer(&mut self.out, &line).map_err(|e| Error::io(&self.path, e.into()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }
}

/// Trainable or frozen class centers. Trainable ones are kept raw and
/// normalized on every forward pass.
enum Centers {
    Trainable(Matrix),
    Frozen(ClassCenters),
}

impl Centers {
    fn init(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::CENTER_INIT);
        let data = (0..dim * classes).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Centers::Trainable(Matrix::from_vec(dim, classes, data)?))
    }

    fn current(&self) -> Result<ClassCenters> {
        match self {
            Centers::Trainable(raw) => ClassCenters::normalize(raw),
            Centers::Frozen(c) => Ok(c.clone()),
        }
    }
}

/// Yields training batches: shuffled epochs with the tail dropped, or
/// P classes × K samples for triplet methods.
struct Batcher {
    seed: u64,
    train: Vec<usize>,
    batch_size: usize,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
    by_class: Vec<Vec<usize>>,
    pk: Option<(usize, usize)>,
    pk_rng: rand_chacha::ChaCha20Rng,
}

impl Batcher {
    fn new(ds: &Dataset, config: &TrainConfig) -> Result<Self> {
        let train = ds.train_indices();
        let mut by_class = vec![Vec::new(); ds.classes];
        for &i in &train {
            by_class[ds.labels[i]].push(i);
        }
        let pk = if config.method.is_triplet() {
            let usable = by_class.iter().filter(|m| m.len() >= 2).count();
            if usable < 2 || config.triplet_classes > usable {
                return Err(Error::InsufficientSamples(format!(
                    "triplet batches need {} classes with two training samples, {usable} available",
                    config.triplet_classes.max(2)
                )));
            }
            Some((config.triplet_classes, config.triplet_per_class))
        } else {
            if train.len() < config.batch_size {
                return Err(Error::InsufficientSamples(format!(
                    "batch size {} exceeds {} training samples",
                    config.batch_size,
                    train.len()
                )));
            }
            None
        };
        Ok(Self {
            seed: config.seed,
            train,
            batch_size: config.batch_size,
            epoch: 0,
            order: Vec::new(),
            cursor: 0,
            by_class,
            pk,
            pk_rng: stream_rng(config.seed, streams::TRIPLET_BATCHES),
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if let Some((p, k)) = self.pk {
            let eligible: Vec<usize> = (0..self.by_class.len()).filter(|&c| self.by_class[c].len() >= 2).collect();
            let mut batch = Vec::with_capacity(p * k);
            for ci in index::sample(&mut self.pk_rng, eligible.len(), p) {
                let members = &self.by_class[eligible[ci]];
                let take = k.min(members.len());
                for m in index::sample(&mut self.pk_rng, members.len(), take) {
                    batch.push(members[m]);
                }
            }
            return batch;
        }
        if self.cursor + self.batch_size > self.order.len() {
            self.order = self.train.clone();
            let mut rng = stream_rng(self.seed, streams::SHUFFLE_BASE + self.epoch);
            self.order.shuffle(&mut rng);
            self.epoch += 1;
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

/// All `(a, p, n)` position triples of a batch in lexicographic order,
/// thinned by a fixed stride to at most `cap`.
fn mine_triplets(labels: &[usize], cap: usize) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let mut all = Vec::new();
    for a in 0..n {
        for p in 0..n {
            if p == a || labels[p] != labels[a] {
                continue;
            }
            for q in 0..n {
                if labels[q] != labels[a] {
                    all.push((a, p, q));
                }
            }
        }
    }
    if all.len() <= cap {
        return all;
    }
    (0..cap).map(|k| all[k * all.len() / cap]).collect()
}

struct StepResult {
    loss: f64,
    grad_raw: Matrix,
    grad_centers: Option<Matrix>,
    margins: Option<PerSampleMargins>,
}

struct Run<'a> {
    config: &'a TrainConfig,
    ds: &'a Dataset,
    signals: Option<TeacherSignals>,
    a_max: AMaxMode,
}

impl Run<'_> {
    fn classification(
        &self,
        emb: &EmbeddingBatch,
        centers: &ClassCenters,
        labels: &[usize],
        batch: &[usize],
    ) -> Result<StepResult> {
        let logits = cosine_logits(emb, centers)?;
        let mut margins = None;
        let out = match self.config.method {
            Method::MarginDistillation => {
                let signals = self.signals.as_ref().expect("teacher signals");
                let a: Vec<f64> = batch.iter().map(|&i| signals.a[i]).collect();
                let m = per_sample_margins_with(&a, self.config.m_min, self.config.m_max, self.a_max)?;
                let out = margin_distillation_loss(&logits, labels, &m, self.config.margin.s)?;
                margins = Some(m);
                out
            }
            Method::TemperatureKd => {
                let signals = self.signals.as_ref().expect("teacher signals");
                let teacher = signals.logits.select(batch);
                let opts = KdOptions {
                    temperature: self.config.temperature,
                    hard_weight: self.config.kd_hard_weight,
                };
                temperature_kd_loss(&logits, &teacher, labels, &self.config.margin, opts)?
            }
            _ => unified_margin_loss(&logits, labels, &self.config.margin)?,
        };
        let grads = backprop_to_embeddings(&out.grad_logits, emb, centers)?;
        Ok(StepResult {
            loss: out.value,
            grad_raw: grads.grad_x,
            grad_centers: grads.grad_w_applicable.then_some(grads.grad_w),
            margins,
        })
    }

    fn triplet(&self, emb: &EmbeddingBatch, labels: &[usize], batch: &[usize]) -> Result<StepResult> {
        let signals = self.signals.as_ref().expect("teacher signals");
        let triplets = mine_triplets(labels, self.config.batch_size);
        if triplets.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let pos = |f: fn(&(usize, usize, usize)) -> usize| -> Vec<usize> { triplets.iter().map(f).collect() };
        let (ia, ip, ineg) = (pos(|t| t.0), pos(|t| t.1), pos(|t| t.2));
        let global = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&k| batch[k]).collect() };
        let student = TripletBatch::new(emb.select(&ia), emb.select(&ip), emb.select(&ineg))?;
        let teacher = TripletBatch::new(
            signals.embeddings.select(&global(&ia)),
            signals.embeddings.select(&global(&ip)),
            signals.embeddings.select(&global(&ineg)),
        )?;
        let metric = if self.config.method == Method::TripletL2 {
            DistanceMetric::L2
        } else {
            DistanceMetric::Cos
        };
        let out = triplet_distillation_loss(&student, &teacher, self.config.m_min, self.config.m_max, metric)?;
        let mut grad_unit = Matrix::zeros(emb.len(), emb.dim());
        for (k, &(a, p, q)) in triplets.iter().enumerate() {
            for (row, src) in [(a, &out.grad_anchor), (p, &out.grad_positive), (q, &out.grad_negative)] {
                for (g, v) in grad_unit.row_mut(row).iter_mut().zip(src.row(k)) {
                    *g += v;
                }
            }
        }
        Ok(StepResult {
            loss: out.value,
            grad_raw: emb.pull_back(&grad_unit)?,
            grad_centers: None,
            margins: None,
        })
    }

    fn step(&self, emb: &EmbeddingBatch, centers: &ClassCenters, batch: &[usize]) -> Result<StepResult> {
        let labels: Vec<usize> = batch.iter().map(|&i| self.ds.labels[i]).collect();
        match self.config.method {
            Method::TripletL2 | Method::TripletCos => self.triplet(emb, &labels, batch),
            Method::Angular => {
                let mut res = self.classification(emb, centers, &labels, batch)?;
                let signals = self.signals.as_ref().expect("teacher signals");
                let ang = angular_distillation_loss(emb, &signals.embeddings.select(batch))?;
                let lambda = self.config.lambda_angular;
                let extra = emb.pull_back(&ang.grad)?;
                for (g, e) in res.grad_raw.as_mut_slice().iter_mut().zip(extra.as_slice()) {
                    *g += lambda * e;
                }
                res.loss += lambda * ang.value;
                Ok(res)
            }
            _ => self.classification(emb, centers, &labels, batch),
        }
    }
}

fn run(
    config: &TrainConfig,
    ds: &Dataset,
    role: Role,
    teacher: Option<&Checkpoint>,
    observer: &mut dyn StepObserver,
) -> Result<Checkpoint> {
    config.validate()?;
    if config.layer_dims[0] != ds.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "network expects inputs of dimension {}, dataset has {}",
            config.layer_dims[0],
            ds.input_dim()
        )));
    }
    let dim = *config.layer_dims.last().unwrap();
    let signals = match (config.method.needs_teacher(), teacher) {
        (false, _) => None,
        (true, None) => return Err(Error::MissingTeacher(format!("method {} needs a teacher", config.method))),
        (true, Some(t)) => {
            if matches!(config.method, Method::MarginDistillation | Method::Angular) && t.embedding_dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "method {} needs equal embedding dimensions, teacher {} vs student {dim}",
                    config.method,
                    t.embedding_dim()
                )));
            }
            Some(precompute_teacher_signals(t, ds)?)
        }
    };
    let mut centers = match (config.method, teacher) {
        (Method::MarginDistillation, Some(t)) => Centers::Frozen(transfer_centers(t, dim)?),
        _ => Centers::init(dim, ds.classes, config.seed)?,
    };
    let a_max = match (&signals, config.global_a_max) {
        (Some(s), true) => AMaxMode::Global(ds.train_indices().iter().map(|&i| s.a[i].max(0.0)).fold(0.0, f64::max)),
        _ => AMaxMode::Batch,
    };
    let runner = Run {
        config,
        ds,
        signals,
        a_max,
    };
    let mut params = MlpParams::init(&config.layer_dims, config.seed)?;
    let mut optim = SgdMomentum::new(config.momentum, config.weight_decay)?;
    let mut batcher = Batcher::new(ds, config)?;
    let mut last_loss = f64::NAN;
    for it in 0..config.iterations {
        let batch = batcher.next_batch();
        let inputs = ds.inputs.select_rows(&batch);
        let (emb, cache) = mlp_forward(&params, &inputs)?;
        let current = centers.current()?;
        let res = runner.step(&emb, &current, &batch)?;
        if !res.loss.is_finite() || res.loss > DIVERGENCE_LIMIT {
            return Err(Error::DivergedLoss {
                iteration: it,
                value: res.loss,
            });
        }
        let grads = mlp_backward_raw(&params, &cache, &res.grad_raw)?;
        let lr = lr_at(it, &config.schedule);
        let mut slots: Vec<ParamSlot<'_>> = Vec::with_capacity(2 * params.num_layers() + 1);
        for ((w, b), (gw, gb)) in params
            .weights
            .iter_mut()
            .zip(params.biases.iter_mut())
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            slots.push(ParamSlot {
                value: w.as_mut_slice(),
                grad: gw.as_slice(),
                frozen: false,
            });
            slots.push(ParamSlot {
                value: b,
                grad: gb,
                frozen: false,
            });
        }
        let zero_grad;
        if let Centers::Trainable(raw) = &mut centers {
            let grad = match &res.grad_centers {
                Some(g) => g.as_slice(),
                None => {
                    zero_grad = vec![0.0; raw.as_slice().len()];
                    &zero_grad
                }
            };
            // triplet runs never touch their (unused) centers
            let frozen = res.grad_centers.is_none();
            slots.push(ParamSlot {
                value: raw.as_mut_slice(),
                grad,
                frozen,
            });
        }
        optim.step(&mut slots, lr)?;
        drop(slots);
        last_loss = res.loss;
        let after = centers.current()?;
        observer.on_step(&StepInfo {
            iteration: it,
            lr,
            loss: res.loss,
            margins: res.margins.as_ref(),
            params: &params,
            centers: &after,
        })?;
    }
    let final_centers = match centers {
        Centers::Trainable(raw) => ClassCenters::normalize(&raw)?,
        Centers::Frozen(c) => c,
    };
    Ok(Checkpoint {
        format_version: CHECKPOINT_VERSION,
        role,
        params,
        centers: final_centers,
        meta: TrainingMeta {
            iterations: config.iterations as u64,
            final_loss: last_loss,
            seed: config.seed,
            method: config.method.name().to_string(),
        },
    })
}

/// Trains the embedder and class centers jointly with the margin softmax.
pub fn train_teacher(config: &TrainConfig, ds: &Dataset, observer: &mut dyn StepObserver) -> Result<Checkpoint> {
    if config.method != Method::ArcFace {
        return Err(Error::InvalidConfig(format!(
            "teachers are trained with arcface, not {}",
            config.method
        )));
    }
    run(config, ds, Role::Teacher, None, observer)
}

pub fn distill_student(
    config: &TrainConfig,
    ds: &Dataset,
    teacher: Option<&Checkpoint>,
    observer: &mut dyn StepObserver,
) -> Result<Checkpoint> {
    run(config, ds, Role::Student, teacher, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn small(method: Method, dims: Vec<usize>, iterations: usize) -> TrainConfig {
        let mut c = TrainConfig::new(method, dims).with_iterations(iterations).with_seed(3);
        c.batch_size = 32;
        c.triplet_classes = 4;
        c.triplet_per_class = 4;
        c
    }

    #[test]
    fn triplet_mining_is_valid_and_capped() {
        let labels = [0, 0, 1, 1, 2];
        let all = mine_triplets(&labels, 1000);
        // anchors 0..4 each have one positive; negatives 3, 3, 3, 3
        assert_eq!(all.len(), 12);
        for &(a, p, n) in &all {
            assert!(a != p && labels[a] == labels[p] && labels[n] != labels[a]);
        }
        let capped = mine_triplets(&labels, 5);
        assert_eq!(capped.len(), 5);
        assert!(capped.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn epochs_cover_training_set_without_eval_leak() {
        let ds = generate_synthetic(4, 10, 4, 0.2, 1).unwrap();
        let mut cfg = small(Method::ArcFace, vec![4, 4], 1);
        cfg.batch_size = 8;
        let mut b = Batcher::new(&ds, &cfg).unwrap();
        let mut seen: Vec<usize> = (0..4).flat_map(|_| b.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, ds.train_indices());
    }

    #[test]
    fn teacher_is_deterministic() {
        let ds = generate_synthetic(4, 20, 8, 0.2, 1).unwrap();
        let cfg = small(Method::ArcFace, vec![8, 16, 4], 30);
        let a = train_teacher(&cfg, &ds, &mut NoObserver).unwrap();
        let b = train_teacher(&cfg, &ds, &mut NoObserver).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.role, Role::Teacher);
    }

    #[test]
    fn every_method_runs() {
        let ds = generate_synthetic(6, 20, 8, 0.2, 1).unwrap();
        let teacher = train_teacher(&small(Method::ArcFace, vec![8, 16, 4], 40), &ds, &mut NoObserver).unwrap();
        for method in Method::ALL {
            let cfg = small(method, vec![8, 6, 4], 20);
            let mut losses = Vec::new();
            let mut obs = |info: &StepInfo<'_>| {
                losses.push(info.loss);
                Ok(())
            };
            let s = distill_student(&cfg, &ds, Some(&teacher), &mut obs).unwrap();
            assert_eq!(losses.len(), 20, "{method}");
            assert!(losses.iter().all(|l| l.is_finite()), "{method}");
            assert_eq!(s.meta.method, method.name());
        }
    }

    #[test]
    fn missing_teacher_and_dimension_checks() {
        let ds = generate_synthetic(4, 20, 8, 0.2, 1).unwrap();
        let cfg = small(Method::MarginDistillation, vec![8, 4], 5);
        assert!(matches!(distill_student(&cfg, &ds, None, &mut NoObserver), Err(Error::MissingTeacher(_))));
        let teacher = train_teacher(&small(Method::ArcFace, vec![8, 6], 5), &ds, &mut NoObserver).unwrap();
        assert!(matches!(
            distill_student(&cfg, &ds, Some(&teacher), &mut NoObserver),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(distill_student(&small(Method::ArcFace, vec![8, 4], 5), &ds, None, &mut NoObserver).is_ok());
    }

    #[test]
    fn centers_stay_frozen_every_step() {
        let ds = generate_synthetic(4, 20, 8, 0.2, 1).unwrap();
        let teacher = train_teacher(&small(Method::ArcFace, vec![8, 4], 20), &ds, &mut NoObserver).unwrap();
        let cfg = small(Method::MarginDistillation, vec![8, 6, 4], 25);
        let mut steps = 0;
        let mut obs = |info: &StepInfo<'_>| {
            assert_eq!(info.centers.matrix(), teacher.centers.matrix());
            let m = info.margins.unwrap();
            assert!(m.margins.iter().all(|&v| (0.2..=0.5).contains(&v)));
            steps += 1;
            Ok(())
        };
        let s = distill_student(&cfg, &ds, Some(&teacher), &mut obs).unwrap();
        assert_eq!(steps, 25);
        assert_eq!(s.centers.matrix(), teacher.centers.matrix());
    }

    #[test]
    fn diverging_run_is_reported() {
        let ds = generate_synthetic(4, 20, 8, 0.2, 1).unwrap();
        let mut cfg = small(Method::ArcFace, vec![8, 4], 5);
        cfg.margin.s = 1e6;
        assert!(matches!(
            train_teacher(&cfg, &ds, &mut NoObserver),
            Err(Error::DivergedLoss { .. })
        ));
    }

    #[test]
    fn metrics_stream_has_one_line_per_step() {
        let ds = generate_synthetic(4, 20, 8, 0.2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut w = MetricsWriter::create(&path).unwrap();
        train_teacher(&small(Method::ArcFace, vec![8, 4], 7), &ds, &mut w).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[6]["iteration"], 6);
        assert!(lines[0]["lr"].as_f64().unwrap() > 0.0);
    }
}
