//! Optimizer, schedule, teacher training and student distillation.

mod loops;
mod optim;
mod signals;

pub use loops::{distill_student, train_teacher, MetricsWriter, NoObserver, StepInfo, StepObserver};
pub use optim::{lr_at, ParamSlot, SgdMomentum, StepSchedule};
pub use signals::{precompute_teacher_signals, transfer_centers, TeacherSignals};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{MarginSpec, DEFAULT_M_MAX, DEFAULT_M_MIN, DEFAULT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "arcface")]
    ArcFace,
    #[serde(rename = "margin")]
    MarginDistillation,
    #[serde(rename = "triplet-l2")]
    TripletL2,
    #[serde(rename = "triplet-cos")]
    TripletCos,
    #[serde(rename = "angular")]
    Angular,
    #[serde(rename = "temp-kd")]
    TemperatureKd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ArcFace,
        Method::MarginDistillation,
        Method::TripletL2,
        Method::TripletCos,
        Method::Angular,
        Method::TemperatureKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ArcFace => "arcface",
            Method::MarginDistillation => "margin",
            Method::TripletL2 => "triplet-l2",
            Method::TripletCos => "triplet-cos",
            Method::Angular => "angular",
            Method::TemperatureKd => "temp-kd",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Method::ArcFace
    }

    fn is_triplet(self) -> bool {
        matches!(self, Method::TripletL2 | Method::TripletCos)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Network widths `[D_in, hidden…, D]`.
    pub layer_dims: Vec<usize>,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub schedule: StepSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Margins of the classification loss (ArcFace preset by default).
    pub margin: MarginSpec,
    pub m_min: f64,
    pub m_max: f64,
    /// Normalize margin-distillation cosines by the training-set maximum
    /// instead of the batch maximum.
    pub global_a_max: bool,
    pub temperature: f64,
    pub kd_hard_weight: f64,
    pub lambda_angular: f64,
    /// Classes per triplet batch.
    pub triplet_classes: usize,
    /// Samples per class in a triplet batch.
    pub triplet_per_class: usize,
}

pub const DEFAULT_BATCH: usize = 128;
pub const DEFAULT_ITERATIONS: usize = 20_000;
pub const DEFAULT_MILESTONES: [usize; 3] = [10_000, 15_000, 18_000];
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
pub const DEFAULT_TEMPERATURE: f64 = 4.0;

impl TrainConfig {
    /// Desk-scale defaults for `method` on a network with `layer_dims`.
    pub fn new(method: Method, layer_dims: Vec<usize>) -> Self {
        Self {
            method,
            layer_dims,
            batch_size: DEFAULT_BATCH,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
            schedule: StepSchedule {
                base_lr: DEFAULT_LR,
                milestones: DEFAULT_MILESTONES.to_vec(),
                decay_factor: 10.0,
            },
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            margin: MarginSpec::arcface(DEFAULT_SCALE),
            m_min: DEFAULT_M_MIN,
            m_max: DEFAULT_M_MAX,
            global_a_max: false,
            temperature: DEFAULT_TEMPERATURE,
            kd_hard_weight: 0.0,
            lambda_angular: 1.0,
            triplet_classes: 16,
            triplet_per_class: 8,
        }
    }

    /// Shrinks the run to `iterations`, moving the milestones to the same
    /// fractions of the run as the defaults.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        let scale = |m: usize| m * iterations / DEFAULT_ITERATIONS;
        let mut milestones: Vec<usize> = DEFAULT_MILESTONES.iter().map(|&m| scale(m)).collect();
        milestones.dedup();
        self.iterations = iterations;
        self.schedule.milestones = milestones;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.layer_dims.is_empty() || self.layer_dims.contains(&0) {
            return bad(format!("invalid layer dims {:?}", self.layer_dims));
        }
        if *self.layer_dims.last().unwrap() < 2 {
            return bad("embedding dimension must be >= 2".into());
        }
        self.schedule.validate()?;
        SgdMomentum::new(self.momentum, self.weight_decay)?;
        self.margin.validate()?;
        if !(self.m_min >= 0.0 && self.m_min <= self.m_max && self.m_max < std::f64::consts::FRAC_PI_2) {
            return bad(format!("need 0 <= m_min <= m_max < pi/2, got [{}, {}]", self.m_min, self.m_max));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if !(self.kd_hard_weight >= 0.0 && self.lambda_angular >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.method.is_triplet() && (self.triplet_classes < 2 || self.triplet_per_class < 2) {
            return bad("triplet batches need >= 2 classes and >= 2 samples per class".into());
        }
        Ok(())
    }
}
