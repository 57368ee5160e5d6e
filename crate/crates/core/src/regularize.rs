//! Consistency regularization by temporal ensembling, and the weight
//! schedules that ramp it up over training.
//!
//! Each example keeps the running arithmetic mean of the predictions made
//! for it in earlier epochs. The consistency loss is the batch mean of the
//! squared L2 distance between the current prediction and that mean; the
//! buffer is a constant as far as gradients are concerned.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBuffer {
    rows: usize,
    classes: usize,
    means: Vec<f64>,
    counts: Vec<u64>,
}

impl PredictionBuffer {
    pub fn new(rows: usize, classes: usize) -> Self {
        Self {
            rows,
            classes,
            means: vec![0.0; rows * classes],
            counts: vec![0; rows],
        }
    }

    pub fn from_parts(rows: usize, classes: usize, means: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if means.len() != rows * classes || counts.len() != rows {
            return Err(Error::invalid("prediction buffer arrays do not match its shape"));
        }
        Ok(Self {
            rows,
            classes,
            means,
            counts,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.classes..(i + 1) * self.classes]
    }

    /// Buffered means of the given examples as a `batch x K` tensor.
    pub fn slice(&self, ids: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(ids.len() * self.classes);
        for &i in ids {
            if i >= self.rows {
                return Err(Error::invalid(format!("example id {i} out of range for {} rows", self.rows)));
            }
            data.extend_from_slice(self.mean(i));
        }
        Ok(Tensor::from_raw(vec![ids.len(), self.classes], data))
    }

    /// `mean_i <- (t_i * mean_i + pred) / (t_i + 1)`, `t_i <- t_i + 1`.
    pub fn update(&mut self, ids: &[usize], preds: &Tensor) -> Result<()> {
        if preds.rows() != ids.len() || preds.cols() != self.classes {
            return Err(Error::shape(
                "update_buffer",
                format!(
                    "{} ids with predictions {:?}, buffer has {} classes",
                    ids.len(),
                    preds.shape(),
                    self.classes
                ),
            ));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.rows) {
            return Err(Error::invalid(format!("example id {bad} out of range for {} rows", self.rows)));
        }
        for (r, &i) in ids.iter().enumerate() {
            let t = self.counts[i] as f64;
            let k = self.classes;
            for (m, p) in self.means[i * k..(i + 1) * k].iter_mut().zip(preds.row(r)) {
                *m = (t * *m + p) / (t + 1.0);
            }
            self.counts[i] += 1;
        }
        Ok(())
    }
}

/// Batch mean of `‖current − buffered‖²` and its gradient
/// `2 (current − buffered) / batch`; zero at epoch 0.
pub fn consistency_loss(current: &Tensor, buffered: &Tensor, epoch: usize) -> Result<(f64, Tensor)> {
    if current.shape() != buffered.shape() {
        return Err(Error::shape(
            "consistency_loss",
            format!("{:?} vs {:?}", current.shape(), buffered.shape()),
        ));
    }
    let mut grad = Tensor::zeros(current.shape().to_vec());
    if epoch == 0 || current.numel() == 0 {
        return Ok((0.0, grad));
    }
    let batch = current.rows() as f64;
    let mut loss = 0.0;
    for ((g, c), b) in grad.data_mut().iter_mut().zip(current.data()).zip(buffered.data()) {
        let d = c - b;
        loss += d * d;
        *g = 2.0 * d / batch;
    }
    Ok((loss / batch, grad))
}

/// Records the consistency loss on a graph; `probs` is `batch x K`.
pub fn consistency_term(g: &mut Graph, probs: NodeId, buffered: Tensor) -> Result<NodeId> {
    let batch = g.value(probs).rows() as f64;
    let b = g.input(buffered);
    let diff = g.sub(probs, b)?;
    let sq = g.square(diff)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    Cosine,
    Cyclic,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lambda_max: f64,
    pub total_epochs: usize,
}

impl ScheduleSpec {
    pub fn linear(lambda_max: f64, total_epochs: usize) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            lambda_max,
            total_epochs,
        }
    }
}

/// Consistency weight at epoch `t ∈ [0, T]`.
pub fn cr_weight(spec: &ScheduleSpec, t: usize) -> Result<f64> {
    let big_t = spec.total_epochs;
    if t > big_t {
        return Err(Error::invalid(format!("epoch {t} outside [0, {big_t}]")));
    }
    if big_t == 0 {
        return Ok(spec.lambda_max);
    }
    let r = t as f64 / big_t as f64;
    let lam = spec.lambda_max;
    Ok(match spec.kind {
        ScheduleKind::Linear => r * lam,
        ScheduleKind::Cosine => ((1.0 - r) * FRAC_PI_2).cos() * lam,
        ScheduleKind::Cyclic => (1.0 - (1.0 - r) * (1.0 - r)).max(0.0).sqrt() * lam,
        ScheduleKind::Piecewise => {
            // compare 3t against T to keep the thirds exact
            let (t3, bt) = (3 * t, big_t);
            if t == 0 || t3 <= bt {
                0.0
            } else if t3 <= 2 * bt {
                lam / 2.0
            } else {
                lam
            }
        }
    })
}
