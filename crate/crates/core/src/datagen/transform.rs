//! Affine patch transformations `γ(v) = s · P v + shift`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::FeatureVocabulary;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub scale: f64,
    pub shift: Vec<f64>,
    /// `out[i] = scale * v[permutation[i]] + shift[i]`.
    pub permutation: Vec<usize>,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: 1.0,
            shift: vec![0.0; dim],
            permutation: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn validate(&self) -> Result<()> {
        let b = self.dim();
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid("transform scale must be positive"));
        }
        if self.permutation.len() != b {
            return Err(Error::invalid("transform permutation length differs from shift"));
        }
        let mut seen = vec![false; b];
        for &p in &self.permutation {
            if p >= b || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid("transform permutation is not a permutation"));
            }
        }
        if self.shift.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("transform shift must be finite"));
        }
        Ok(())
    }

    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.scale * v[self.permutation[i]] + self.shift[i];
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        out
    }

    /// Exact `sup ‖γ(v) − v‖∞` over the box `center ± radius`.
    ///
    /// Each output coordinate depends on at most two independent box
    /// coordinates, so the supremum separates per coordinate.
    pub fn displacement_bound(&self, center: &[f64], radius: f64) -> f64 {
        let s = self.scale;
        (0..self.dim())
            .map(|i| {
                let j = self.permutation[i];
                let mid = s * center[j] - center[i] + self.shift[i];
                let spread = if i == j { (s - 1.0).abs() } else { s.abs() + 1.0 };
                mid.abs() + spread * radius
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub transforms: Vec<AffineTransform>,
    /// Maximum of `‖γ(v) − v‖∞` over all transforms and the representation
    /// support of the vocabulary.
    pub magnitude_bound: f64,
}

impl TransformSet {
    pub fn new(transforms: Vec<AffineTransform>, vocab: &FeatureVocabulary) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::invalid("transform set must not be empty"));
        }
        for t in &transforms {
            t.validate()?;
            if t.dim() != vocab.patch_dim {
                return Err(Error::invalid(format!(
                    "transform dimension {} differs from patch_dim {}",
                    t.dim(),
                    vocab.patch_dim
                )));
            }
        }
        let magnitude_bound = transforms
            .iter()
            .flat_map(|t| {
                vocab
                    .features
                    .iter()
                    .map(move |f| t.displacement_bound(&f.representation_mean, f.representation_scale))
            })
            .fold(0.0, f64::max);
        Ok(Self {
            transforms,
            magnitude_bound,
        })
    }

    pub fn identity(vocab: &FeatureVocabulary) -> Self {
        Self::new(vec![AffineTransform::identity(vocab.patch_dim)], vocab).expect("identity is valid")
    }

    /// `count` random transforms with shifts in `[-magnitude, magnitude]^b`,
    /// scales in `[1 - magnitude/2, 1 + magnitude/2]` (kept positive), and
    /// identity permutations. The identity is always included first.
    pub fn random(vocab: &FeatureVocabulary, count: usize, magnitude: f64, rng: &mut Rng) -> Result<Self> {
        if !(magnitude >= 0.0) {
            return Err(Error::invalid("transform magnitude must be nonnegative"));
        }
        let b = vocab.patch_dim;
        let mut transforms = vec![AffineTransform::identity(b)];
        if magnitude > 0.0 {
            for _ in 1..count.max(1) {
                let scale = (1.0 + magnitude * rng.gen_range(-0.5..=0.5)).max(0.05);
                let shift = (0..b).map(|_| magnitude * rng.gen_range(-1.0..=1.0)).collect();
                transforms.push(AffineTransform {
                    scale,
                    shift,
                    permutation: (0..b).collect(),
                });
            }
        }
        Self::new(transforms, vocab)
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn pick(&self, rng: &mut Rng) -> &AffineTransform {
        &self.transforms[rng.gen_range(0..self.transforms.len())]
    }
}
