use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub classes: usize,
    pub n: usize,
    pub patches: usize,
    pub features: usize,
    pub delta: f64,
    /// Lipschitz constant of the feature extractor.
    pub lipschitz_extractor: f64,
    /// Transformation robustness constant.
    pub lipschitz_transform: f64,
    /// Largest per-feature representation variation.
    pub nu: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.n == 0 || self.patches == 0 || self.features == 0 {
            return Err(Error::invalid("K, N, M and |Z| must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        for (name, v) in [
            ("lipschitz_extractor", self.lipschitz_extractor),
            ("lipschitz_transform", self.lipschitz_transform),
            ("nu", self.nu),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Constant-free scaling surrogates of the four error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// `√(K·M / (N·|Z|·δ))`
    pub sampling: f64,
    /// `M / |Z|`
    pub mixing: f64,
    /// `L_X·ν / √δ`
    pub extractor: f64,
    /// `L_Γ`
    pub transform: f64,
    pub sum: f64,
}

pub fn bound_terms(inputs: &BoundInputs) -> Result<BoundTerms> {
    inputs.validate()?;
    let k = inputs.classes as f64;
    let m = inputs.patches as f64;
    let n = inputs.n as f64;
    let z = inputs.features as f64;
    let sampling = (k * m / (n * z * inputs.delta)).sqrt();
    let mixing = m / z;
    let extractor = inputs.lipschitz_extractor * inputs.nu / inputs.delta.sqrt();
    let transform = inputs.lipschitz_transform;
    Ok(BoundTerms {
        sampling,
        mixing,
        extractor,
        transform,
        sum: sampling + mixing + extractor + transform,
    })
}
