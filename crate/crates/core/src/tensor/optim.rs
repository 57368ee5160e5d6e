//! SGD with momentum and step-decay learning rates.

use serde::{Deserialize, Serialize};

use super::{Gradients, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub momentum: Vec<f64>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        let momentum = vec![0.0; tensor.numel()];
        Self {
            name: name.into(),
            tensor,
            momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_milestones: vec![150, 180, 210],
            decay_factor: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if self.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("decay_milestones must be strictly increasing"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("decay_factor must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Milestones placed at the same fractions of `epochs` as 150/180/210 of 240.
    pub fn scaled_to(epochs: usize) -> Self {
        let at = |num: usize| (epochs * num / 240).max(1);
        let mut milestones: Vec<usize> = vec![at(150), at(180), at(210)];
        milestones.dedup();
        Self {
            decay_milestones: milestones,
            ..Self::default()
        }
    }
}

/// Learning rate in effect during `epoch`.
pub fn lr_at(epoch: usize, cfg: &OptimizerConfig) -> f64 {
    let passed = cfg.decay_milestones.iter().filter(|&&m| m <= epoch).count();
    cfg.learning_rate * cfg.decay_factor.powi(passed as i32)
}

/// One momentum step with L2 weight decay folded into the gradient:
/// `v <- mu * v + g + wd * w`, `w <- w - lr * v`.
pub fn sgd_step(
    params: &mut [Parameter],
    grads: &Gradients,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads
            .get(i)
            .ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
        if g.shape() != p.tensor.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("gradient {:?} for parameter `{}` {:?}", g.shape(), p.name, p.tensor.shape()),
            ));
        }
        let w = p.tensor.data_mut();
        for ((wi, vi), gi) in w.iter_mut().zip(p.momentum.iter_mut()).zip(g.data()) {
            *vi = cfg.momentum * *vi + gi + cfg.weight_decay * *wi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}

/// Wraps a plain gradient list (as returned by `forward_backward`).
impl From<Vec<Tensor>> for Gradients {
    fn from(v: Vec<Tensor>) -> Self {
        let mut g = Gradients::with_len(v.len());
        for (i, t) in v.into_iter().enumerate() {
            g.set(i, t);
        }
        g
    }
}
