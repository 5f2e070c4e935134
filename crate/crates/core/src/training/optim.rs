use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::{Module, Param};
use crate::scalar::Scalar;

/// Step-decay SGD schedule with momentum and no weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Must stay 0; present so configs can say so explicitly.
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.9,
            epochs: 120,
            decay_epochs: vec![80, 100],
            decay_factor: 10.0,
            weight_decay: 0.0,
            batch_size: 128,
        }
    }
}

impl OptimConfig {
    /// 24 epochs with drops at 16 and 20: the same fractions of the run as 80/100 of 120.
    /// The learning rate follows the batch size linearly (0.1 at 128, 0.025 at 32).
    pub fn desk() -> Self {
        Self { base_lr: 0.025, epochs: 24, decay_epochs: vec![16, 20], batch_size: 32, ..Self::default() }
    }

    /// Linear-probe schedule on frozen features.
    pub fn probe() -> Self {
        Self { epochs: 30, decay_epochs: vec![20, 25], batch_size: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_decay != 0.0 {
            return Err(invalid("weight decay is not part of the protocol and must be 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch_size must be positive"));
        }
        if !(self.base_lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.decay_factor >= 1.0) {
            return Err(invalid("need base_lr > 0, momentum in [0, 1) and decay_factor >= 1"));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("decay epochs {:?} must be strictly increasing", self.decay_epochs)));
        }
        if self.decay_epochs.last().is_some_and(|&e| e >= self.epochs) {
            return Err(invalid(format!("decay epochs {:?} must be below {}", self.decay_epochs, self.epochs)));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        lr_at(epoch, self)
    }
}

/// `base_lr / decay_factor^k` where `k` counts decay epochs at or before `epoch`.
pub fn lr_at(epoch: usize, config: &OptimConfig) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(invalid(format!("epoch {epoch} outside 0..{}", config.epochs)));
    }
    let drops = config.decay_epochs.iter().filter(|&&d| d <= epoch).count();
    Ok(config.base_lr / config.decay_factor.powi(drops as i32))
}

/// One momentum-SGD step: `v <- m v + g`, `w <- w - lr v`, on every trainable param.
pub fn sgd_step<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, lr: f64, momentum: f64) {
    let (lr, m) = (T::lit(lr), T::lit(momentum));
    module.visit("", &mut |_, p: &mut Param<T>| {
        if !p.trainable {
            return;
        }
        for ((w, v), &g) in p.value.data_mut().iter_mut().zip(p.velocity.iter_mut()).zip(&p.grad) {
            *v = m * *v + g;
            *w -= lr * *v;
        }
    });
}
