use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::TransformSet;
use crate::error::{Error, Result};
use crate::regularize::{ScheduleKind, ScheduleSpec};
use crate::tensor::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMode {
    /// Cross-entropy only.
    #[default]
    Standard,
    /// Cross-entropy plus Lipschitz and consistency regularization.
    Soteacher,
    NoLr,
    NoCr,
}

impl TeacherMode {
    pub fn uses_lipschitz(self) -> bool {
        matches!(self, TeacherMode::Soteacher | TeacherMode::NoCr)
    }

    pub fn uses_consistency(self) -> bool {
        matches!(self, TeacherMode::Soteacher | TeacherMode::NoLr)
    }
}

impl std::str::FromStr for TeacherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Self::Standard),
            "soteacher" => Ok(Self::Soteacher),
            "no-lr" => Ok(Self::NoLr),
            "no-cr" => Ok(Self::NoCr),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected standard, soteacher, no-lr or no-cr)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub lambda_lr: f64,
    pub cr_schedule: ScheduleSpec,
    pub mode: TeacherMode,
    /// Save a checkpoint every this many epochs (0 disables all but the last).
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Transforms applied to every training patch, redrawn each epoch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<TransformSet>,
}

impl TeacherTrainConfig {
    /// Defaults scaled to `epochs`: momentum SGD with step decay, batch 64,
    /// `λ_LR = 1e-5`, a linear consistency ramp to 1, checkpoints every 10
    /// epochs.
    pub fn new(epochs: usize, mode: TeacherMode, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 64,
            optimizer: OptimizerConfig::scaled_to(epochs),
            lambda_lr: 1e-5,
            cr_schedule: ScheduleSpec::linear(1.0, epochs),
            mode,
            checkpoint_every: 10,
            seed,
            augment: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        self.optimizer.validate()?;
        if !(self.lambda_lr >= 0.0 && self.lambda_lr.is_finite()) {
            return Err(Error::invalid("lambda_lr must be a nonnegative number"));
        }
        if !(self.cr_schedule.lambda_max >= 0.0 && self.cr_schedule.lambda_max.is_finite()) {
            return Err(Error::invalid("cr_schedule.lambda_max must be a nonnegative number"));
        }
        Ok(())
    }

    /// `λ_LR` after the mode has been applied.
    pub fn effective_lambda_lr(&self) -> f64 {
        if self.mode.uses_lipschitz() {
            self.lambda_lr
        } else {
            0.0
        }
    }

    /// Consistency schedule after the mode has been applied.
    pub fn effective_schedule(&self) -> ScheduleSpec {
        if self.mode.uses_consistency() {
            self.cr_schedule
        } else {
            ScheduleSpec {
                kind: ScheduleKind::Linear,
                lambda_max: 0.0,
                total_epochs: self.cr_schedule.total_epochs,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub alpha: f64,
    pub temperature: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<TransformSet>,
}

impl DistillConfig {
    /// `α = 0.5`, `τ = 4`, batch 64, optimizer scaled to `epochs`.
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            alpha: 0.5,
            temperature: 4.0,
            epochs,
            batch_size: 64,
            optimizer: OptimizerConfig::scaled_to(epochs),
            seed,
            augment: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        self.optimizer.validate()
    }
}

/// Hex SHA-256 of the JSON serialization of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
