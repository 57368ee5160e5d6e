use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TeacherMode;
use crate::error::{Error, Result};
use crate::store::write_json;

/// Per-epoch means over training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub lr_penalty: f64,
    pub cr_penalty: f64,
    pub lambda_cr: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    /// Mean L1 distance to the true label distribution on the evaluation
    /// split, when it carries ground truth.
    pub test_dist_error: Option<f64>,
    /// `τ²`-scaled distillation term (students only).
    pub kd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Teacher,
    Student,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RunKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<TeacherMode>,
    pub seed: u64,
    pub config_hash: String,
    /// `λ_LR` after the mode was applied.
    pub lambda_lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub checkpoints: Vec<PathBuf>,
    pub final_train_acc: f64,
    pub final_test_acc: Option<f64>,
    /// Sum of the per-component Lipschitz bounds of the final network.
    pub final_lipschitz: f64,
}

impl RunRecord {
    /// Largest violation of the loss-ledger identity over all epochs:
    /// `total = ce + λ_LR·lr + λ_CR·cr` for teachers and
    /// `total = α·ce + (1 − α)·kd` for students.
    pub fn ledger_residual(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| {
                let expect = match self.kind {
                    RunKind::Teacher => e.ce + self.lambda_lr * e.lr_penalty + e.lambda_cr * e.cr_penalty,
                    RunKind::Student => {
                        let a = self.alpha.unwrap_or(1.0);
                        a * e.ce + (1.0 - a) * e.kd
                    }
                };
                (e.total - expect).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// One row per epoch: `epoch, lr, ce, lr_penalty, cr_penalty,
    /// lambda_cr, train_acc, test_acc, test_dist_error, kd, total`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
