//! Heavy-ball SGD and the step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// Constant learning rate for `constant_epochs`, then halved once every
/// `halving_period` epochs (first halving at epoch `constant_epochs + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub constant_epochs: u32,
    pub halving_period: u32,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-2,
            constant_epochs: 8,
            halving_period: 2,
        }
    }
}

impl LrSchedule {
    /// Learning rate for a 1-based epoch.
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        let epoch = epoch.max(1);
        if epoch <= self.constant_epochs {
            return self.initial;
        }
        let halvings = (epoch - self.constant_epochs).div_ceil(self.halving_period.max(1));
        self.initial * 0.5f64.powi(halvings as i32)
    }
}

/// Velocity buffers plus the current learning rate. Slots are indexed by
/// parameter position and allocated on first use.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub momentum: f64,
    pub lr: f64,
    pub epoch: u32,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(momentum: f64, lr: f64) -> Self {
        Self {
            momentum,
            lr,
            epoch: 0,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self, slot: usize) -> Option<&[T]> {
        self.velocity.get(slot).and_then(|v| v.as_deref())
    }

    /// `v <- momentum * v + g; w <- w - lr * v`.
    pub fn step(&mut self, slot: usize, param: &mut [T], grad: &[T]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::Shape(format!(
                "sgd: parameter has {} values, gradient {}",
                param.len(),
                grad.len()
            )));
        }
        if self.velocity.len() <= slot {
            self.velocity.resize(slot + 1, None);
        }
        let v = self.velocity[slot].get_or_insert_with(|| vec![T::zero(); param.len()]);
        if v.len() != param.len() {
            return Err(Error::Shape(format!(
                "sgd: velocity slot {slot} has {} values, parameter {}",
                v.len(),
                param.len()
            )));
        }
        let (mu, lr) = (T::of(self.momentum), T::of(self.lr));
        for ((w, vi), &g) in param.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = mu * *vi + g;
            *w = *w - lr * *vi;
        }
        Ok(())
    }
}
