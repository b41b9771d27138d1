//! SGD with classical momentum, decoupled-into-gradient weight decay, and
//! step learning-rate decay.
//!
//! Update rule per entry:
//!   g <- grad + weight_decay * w
//!   v <- momentum * v + g
//!   w <- w - effective_lr * v
//! with effective_lr = learning_rate * decay_factor^floor(epoch / period).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::params::NamedTensors;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_period_epochs: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 10,
            lr_decay_factor: 0.1,
            lr_decay_period_epochs: 60,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must be in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_decay_period_epochs == 0 {
            return Err(Error::Config(
                "lr_decay_period_epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Step-decayed learning rate for a zero-based epoch index.
pub fn effective_lr(cfg: &TrainerConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.lr_decay_period_epochs) as i32;
    cfg.learning_rate * cfg.lr_decay_factor.powi(steps)
}

pub(crate) fn sgd_update_slice(
    w: &mut [f64],
    grad: &[f64],
    v: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for i in 0..w.len() {
        let g = grad[i] + weight_decay * w[i];
        v[i] = momentum * v[i] + g;
        w[i] -= lr * v[i];
    }
}

/// One SGD step over a named parameter collection. `velocity` must be
/// congruent with `params` (start from `params.zeros_like()`).
pub fn sgd_step(
    params: &mut NamedTensors,
    grads: &NamedTensors,
    velocity: &mut NamedTensors,
    cfg: &TrainerConfig,
    epoch: usize,
) -> Result<()> {
    params.check_congruent(grads, "sgd_step grads")?;
    params.check_congruent(velocity, "sgd_step velocity")?;
    let lr = effective_lr(cfg, epoch);
    for ((name, w), (_, v)) in params.iter_mut().zip(velocity.iter_mut()) {
        let g = grads.get(name).expect("congruence checked");
        sgd_update_slice(
            w.data_mut(),
            g.data(),
            v.data_mut(),
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
    }
    Ok(())
}

/// One SGD step applied directly to a network's parameters.
pub fn sgd_step_network(
    net: &mut Network,
    grads: &NamedTensors,
    velocity: &mut NamedTensors,
    cfg: &TrainerConfig,
    epoch: usize,
) -> Result<()> {
    net.parameters()
        .check_congruent(grads, "sgd_step_network grads")?;
    net.parameters()
        .check_congruent(velocity, "sgd_step_network velocity")?;
    let lr = effective_lr(cfg, epoch);
    for (name, w) in net.parameters_mut() {
        let g = grads.get(&name).expect("congruence checked");
        let v = velocity.get_mut(&name).expect("congruence checked");
        sgd_update_slice(
            w.data_mut(),
            g.data(),
            v.data_mut(),
            lr,
            cfg.momentum,
            cfg.weight_decay,
        );
    }
    Ok(())
}
