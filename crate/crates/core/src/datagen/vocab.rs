//! Feature vocabularies: per-feature label distributions and patch statistics.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Dirichlet, Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub label_distribution: Vec<f64>,
    pub representation_mean: Vec<f64>,
    /// Half-width of the uniform box around the mean; `scale²` bounds the
    /// per-coordinate variance.
    pub representation_scale: f64,
}

/// How the feature names of one input are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cooccurrence {
    /// Every name drawn independently from the sampling weights.
    Iid,
    /// The first name comes from the sampling weights; the rest are drawn
    /// among its ring neighbours within `window`, with weight `1/(1+d)` at
    /// ring distance `d`. Combined with a manifold vocabulary, co-occurrence
    /// decreases with label-distribution divergence.
    Neighbourhood { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVocabulary {
    pub classes: usize,
    pub patch_dim: usize,
    pub features: Vec<FeatureSpec>,
    pub sampling_weights: Vec<f64>,
    pub cooccurrence: Cooccurrence,
}

fn check_simplex(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!("{what}: entries must be finite and nonnegative")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid(format!("{what}: sums to {s}, expected 1")));
    }
    Ok(())
}

impl FeatureVocabulary {
    pub fn new(
        classes: usize,
        patch_dim: usize,
        features: Vec<FeatureSpec>,
        sampling_weights: Vec<f64>,
        cooccurrence: Cooccurrence,
    ) -> Result<Self> {
        let v = Self {
            classes,
            patch_dim,
            features,
            sampling_weights,
            cooccurrence,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one feature"));
        }
        if self.classes == 0 || self.patch_dim == 0 {
            return Err(Error::invalid("classes and patch_dim must be positive"));
        }
        if self.sampling_weights.len() != self.features.len() {
            return Err(Error::invalid(format!(
                "sampling_weights has {} entries for {} features",
                self.sampling_weights.len(),
                self.features.len()
            )));
        }
        check_simplex("sampling_weights", &self.sampling_weights)?;
        for f in &self.features {
            if f.label_distribution.len() != self.classes {
                return Err(Error::invalid(format!(
                    "feature `{}`: label_distribution has {} entries, expected {}",
                    f.name,
                    f.label_distribution.len(),
                    self.classes
                )));
            }
            check_simplex(&format!("feature `{}` label_distribution", f.name), &f.label_distribution)?;
            if f.representation_mean.len() != self.patch_dim {
                return Err(Error::invalid(format!(
                    "feature `{}`: representation_mean has {} entries, expected {}",
                    f.name,
                    f.representation_mean.len(),
                    self.patch_dim
                )));
            }
            if !(f.representation_scale >= 0.0) || !f.representation_scale.is_finite() {
                return Err(Error::invalid(format!(
                    "feature `{}`: representation_scale must be nonnegative",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Largest per-feature variance bound `ν = max_z scale_z²`.
    pub fn max_variance_bound(&self) -> f64 {
        self.features
            .iter()
            .map(|f| f.representation_scale * f.representation_scale)
            .fold(0.0, f64::max)
    }

    /// Draws the `m` feature names of one input.
    pub fn draw_names(&self, m: usize, rng: &mut Rng) -> Vec<usize> {
        let pz = WeightedIndex::new(&self.sampling_weights).expect("validated weights");
        match self.cooccurrence {
            Cooccurrence::Iid => (0..m).map(|_| pz.sample(rng)).collect(),
            Cooccurrence::Neighbourhood { window } => {
                let n = self.len() as i64;
                let first = pz.sample(rng);
                let offsets: Vec<i64> = (-(window as i64)..=window as i64).collect();
                let weights: Vec<f64> = offsets.iter().map(|d| 1.0 / (1.0 + d.abs() as f64)).collect();
                let pick = WeightedIndex::new(&weights).expect("positive weights");
                let mut names = Vec::with_capacity(m);
                names.push(first);
                for _ in 1..m {
                    let off = offsets[pick.sample(rng)];
                    names.push((first as i64 + off).rem_euclid(n) as usize);
                }
                names
            }
        }
    }

    /// Normalized elementwise geometric mean of the named features' label
    /// distributions, the exact label distribution of an input.
    pub fn true_label_distribution(&self, names: &[usize]) -> Result<Vec<f64>> {
        if names.is_empty() {
            return Err(Error::invalid("feature name list is empty"));
        }
        let dists: Vec<&[f64]> = names
            .iter()
            .map(|&z| {
                self.features
                    .get(z)
                    .map(|f| f.label_distribution.as_slice())
                    .ok_or_else(|| Error::invalid(format!("feature index {z} out of range")))
            })
            .collect::<Result<_>>()?;
        geometric_mean(&dists)
    }
}

/// Normalized elementwise geometric mean of probability vectors.
pub fn geometric_mean(dists: &[&[f64]]) -> Result<Vec<f64>> {
    let k = dists[0].len();
    let inv_m = 1.0 / dists.len() as f64;
    let mut logs = vec![0.0; k];
    let mut dead = vec![false; k];
    for d in dists {
        for c in 0..k {
            if d[c] <= 0.0 {
                dead[c] = true;
            } else {
                logs[c] += d[c].ln() * inv_m;
            }
        }
    }
    let mx = logs
        .iter()
        .zip(&dead)
        .filter(|(_, &z)| !z)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::DegenerateGeometricMean);
    }
    let mut out: Vec<f64> = logs
        .iter()
        .zip(&dead)
        .map(|(l, &z)| if z { 0.0 } else { (l - mx).exp() })
        .collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= s);
    Ok(out)
}

/// Parameters of a randomly generated vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabularySpec {
    pub features: usize,
    pub classes: usize,
    pub patch_dim: usize,
    /// Dirichlet concentration of each label distribution (random layout).
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    /// Means are drawn uniformly from `[-mean_spread, mean_spread]^b`.
    #[serde(default = "default_spread")]
    pub mean_spread: f64,
    #[serde(default = "default_scale")]
    pub representation_scale: f64,
    #[serde(default)]
    pub layout: Layout,
    /// Explicit `p_Z`; uniform when absent.
    #[serde(default)]
    pub sampling_weights: Option<Vec<f64>>,
}

fn default_concentration() -> f64 {
    1.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    /// Independent Dirichlet label distributions, i.i.d. feature names.
    #[default]
    Random,
    /// Features on a ring with label distributions varying smoothly along
    /// it; names co-occur with ring neighbours.
    Manifold { sharpness: f64, window: usize },
}

impl VocabularySpec {
    pub fn build(&self, rng: &mut Rng) -> Result<FeatureVocabulary> {
        if self.features == 0 || self.classes == 0 || self.patch_dim == 0 {
            return Err(Error::invalid("features, classes and patch_dim must be positive"));
        }
        let weights = match &self.sampling_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.features as f64; self.features],
        };
        let dirichlet = if self.classes > 1 {
            Some(
                Dirichlet::new_with_size(self.concentration, self.classes)
                    .map_err(|e| Error::invalid(format!("concentration: {e}")))?,
            )
        } else {
            None
        };
        let mut features = Vec::with_capacity(self.features);
        for z in 0..self.features {
            let label_distribution = match (self.layout, &dirichlet) {
                (_, None) => vec![1.0],
                (Layout::Random, Some(d)) => renormalize(d.sample(rng)),
                (Layout::Manifold { sharpness, .. }, Some(_)) => {
                    ring_distribution(z as f64 / self.features as f64, self.classes, sharpness)
                }
            };
            let representation_mean = (0..self.patch_dim)
                .map(|_| rng.gen_range(-self.mean_spread..=self.mean_spread))
                .collect();
            features.push(FeatureSpec {
                name: format!("z{z}"),
                label_distribution,
                representation_mean,
                representation_scale: self.representation_scale,
            });
        }
        let cooccurrence = match self.layout {
            Layout::Random => Cooccurrence::Iid,
            Layout::Manifold { window, .. } => Cooccurrence::Neighbourhood { window },
        };
        FeatureVocabulary::new(self.classes, self.patch_dim, features, weights, cooccurrence)
    }
}

fn renormalize(mut v: Vec<f64>) -> Vec<f64> {
    // floor keeps every class reachable so geometric means never degenerate
    v.iter_mut().for_each(|p| *p = p.max(1e-6));
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= s);
    let s: f64 = v.iter().sum();
    v[0] += 1.0 - s;
    v
}

/// Label distribution at ring position `theta in [0,1)`: a softmax of
/// `sharpness * cos(2π(theta - k/K))`.
fn ring_distribution(theta: f64, classes: usize, sharpness: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..classes)
        .map(|k| sharpness * (2.0 * PI * (theta - k as f64 / classes as f64)).cos())
        .collect();
    let mut p = logits.clone();
    crate::tensor::softmax_row(&mut p);
    renormalize(p)
}
