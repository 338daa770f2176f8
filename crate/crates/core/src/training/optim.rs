use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant learning rate: divided by `decay_factor` at each milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidConfig(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay_factor must be >= 1, got {}",
                self.decay_factor
            )));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "milestones must be strictly increasing: {:?}",
                self.milestones
            )));
        }
        Ok(())
    }
}

pub fn lr_at(iteration: usize, schedule: &StepSchedule) -> f64 {
    let passed = schedule.milestones.iter().filter(|&&m| iteration >= m).count();
    let mut lr = schedule.base_lr;
    for _ in 0..passed {
        lr /= schedule.decay_factor;
    }
    lr
}

/// One trainable tensor with its gradient.
pub struct ParamSlot<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
    /// Frozen slots are skipped entirely.
    pub frozen: bool,
}

/// SGD with momentum and L2 weight decay:
/// `g' = g + λ·w`, `v ← μ·v + g'`, `w ← w − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    /// Velocity buffer for slot `i`, if it has been stepped.
    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        self.velocity.get(i).map(Vec::as_slice)
    }

    /// Slots must be passed in the same order on every call.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>], lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
        }
        if self.velocity.len() != slots.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {}",
                self.velocity.len(),
                slots.len()
            )));
        }
        for (i, (slot, v)) in slots.iter_mut().zip(self.velocity.iter_mut()).enumerate() {
            if slot.value.len() != v.len() || slot.grad.len() != v.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {i}: value {}, grad {}, velocity {}",
                    slot.value.len(),
                    slot.grad.len(),
                    v.len()
                )));
            }
            if slot.frozen {
                continue;
            }
            for ((w, g), vel) in slot.value.iter_mut().zip(slot.grad).zip(v.iter_mut()) {
                let g = g + self.weight_decay * *w;
                *vel = self.momentum * *vel + g;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }
}
