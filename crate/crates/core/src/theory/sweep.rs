use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bound_terms, fit_loglog_slope, BoundInputs, BoundTerms};
use crate::datagen::{sample_dataset, sample_splits, Split, SplitSizes, TransformSet, VocabularySpec};
use crate::error::{Error, Result};
use crate::evalcal::{accuracy, distribution_error, PNorm};
use crate::netlib::{lipschitz_bound, Architecture, Head};
use crate::rng::SeedStream;
use crate::store::write_json;
use crate::trainlab::{init_network, train_teacher, TeacherTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Training-set size.
    N,
    /// Vocabulary size `|Z|`.
    Features,
    TransformMagnitude,
    RepresentationScale,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::N => "n",
            SweepParameter::Features => "features",
            SweepParameter::TransformMagnitude => "transform_magnitude",
            SweepParameter::RepresentationScale => "representation_scale",
        }
    }
}

/// Everything held fixed across a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub vocab: VocabularySpec,
    pub n_train: usize,
    pub n_test: usize,
    pub patches: usize,
    #[serde(default = "default_transform_count")]
    pub transform_count: usize,
    #[serde(default)]
    pub transform_magnitude: f64,
    /// Sample the training split untransformed and draw a fresh transform
    /// for every patch on every epoch instead, so that each example is seen
    /// under varying transformations. The test split is always sampled
    /// with transforms.
    #[serde(default)]
    pub augment: bool,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    #[serde(default = "default_head")]
    pub head: Head,
    pub train: TeacherTrainConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_transform_count() -> usize {
    4
}
fn default_head() -> Head {
    Head::ModifiedSoftmax
}
fn default_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoremSweepConfig {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub base: SweepBase,
}

impl TheoremSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sweep grid must be nonempty and strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one seed"));
        }
        if matches!(self.parameter, SweepParameter::N | SweepParameter::Features)
            && self.grid.iter().any(|v| v.fract() != 0.0 || *v < 1.0)
        {
            return Err(Error::invalid("N and |Z| grid values must be positive integers"));
        }
        self.base.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub distribution_error: f64,
    pub test_accuracy: f64,
    /// Product of the Lipschitz bounds of the extractor and feature layers.
    pub lipschitz_extractor: f64,
    pub terms: BoundTerms,
}

/// Measured distribution error per grid point and seed, with the
/// constant-free bound terms ("scaling surrogates") alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SweepRow>,
    /// Mean measured error per grid point (over completed runs).
    pub mean_error: Vec<f64>,
    /// Mean surrogate sum per grid point.
    pub surrogate: Vec<f64>,
    /// Log-log slope of `mean_error` against the grid.
    pub slope: f64,
}

impl ScalingCurve {
    fn from_rows(cfg: &TheoremSweepConfig, rows: Vec<SweepRow>) -> Self {
        let avg = |f: &dyn Fn(&SweepRow) -> f64, v: f64| {
            let sel: Vec<f64> = rows.iter().filter(|r| r.value == v).map(f).collect();
            if sel.is_empty() {
                f64::NAN
            } else {
                sel.iter().sum::<f64>() / sel.len() as f64
            }
        };
        let mean_error: Vec<f64> = cfg.grid.iter().map(|&v| avg(&|r| r.distribution_error, v)).collect();
        let surrogate = cfg.grid.iter().map(|&v| avg(&|r| r.terms.sum, v)).collect();
        Self {
            parameter: cfg.parameter,
            grid: cfg.grid.clone(),
            seeds: cfg.seeds.clone(),
            slope: fit_loglog_slope(&cfg.grid, &mean_error),
            rows,
            mean_error,
            surrogate,
        }
    }

    /// Measured errors of one seed in grid order (NaN for missing runs).
    pub fn per_seed(&self, seed: u64) -> Vec<f64> {
        self.grid
            .iter()
            .map(|&v| {
                self.rows
                    .iter()
                    .find(|r| r.value == v && r.seed == seed)
                    .map_or(f64::NAN, |r| r.distribution_error)
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "parameter",
            "value",
            "seed",
            "distribution_error",
            "test_accuracy",
            "lipschitz_extractor",
            "term_sampling",
            "term_mixing",
            "term_extractor",
            "term_transform",
            "term_sum",
        ])?;
        for r in &self.rows {
            w.write_record([
                self.parameter.name().to_string(),
                r.value.to_string(),
                r.seed.to_string(),
                r.distribution_error.to_string(),
                r.test_accuracy.to_string(),
                r.lipschitz_extractor.to_string(),
                r.terms.sampling.to_string(),
                r.terms.mixing.to_string(),
                r.terms.extractor.to_string(),
                r.terms.transform.to_string(),
                r.terms.sum.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// A sweep that stopped on a failed sub-run; `curve` holds the runs that
/// completed.
#[derive(Debug)]
pub struct PartialSweep {
    pub curve: ScalingCurve,
    pub error: Error,
}

impl fmt::Display for PartialSweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "sweep incomplete ({} runs finished): {}", self.curve.rows.len(), self.error)
    }
}

impl std::error::Error for PartialSweep {}

/// Trains one patchwise teacher per grid point and seed and measures its
/// L1 distribution error on held-out data. Runs execute on up to `jobs`
/// threads; results do not depend on `jobs`.
pub fn theorem_sweep(cfg: &TheoremSweepConfig, jobs: usize) -> std::result::Result<ScalingCurve, PartialSweep> {
    let fail = |error| PartialSweep {
        curve: ScalingCurve::from_rows(cfg, Vec::new()),
        error,
    };
    cfg.validate().map_err(fail)?;
    let runs: Vec<(f64, u64)> = cfg
        .grid
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| fail(Error::invalid(format!("thread pool: {e}"))))?;
    let results: Vec<Result<SweepRow>> =
        pool.install(|| runs.par_iter().map(|&(v, s)| sweep_run(&cfg.base, cfg.parameter, v, s)).collect());
    let mut rows = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let curve = ScalingCurve::from_rows(cfg, rows);
    match first_error {
        None => Ok(curve),
        Some(error) => Err(PartialSweep { curve, error }),
    }
}

fn sweep_run(base: &SweepBase, parameter: SweepParameter, value: f64, seed: u64) -> Result<SweepRow> {
    let mut spec = base.vocab.clone();
    let mut n_train = base.n_train;
    let mut magnitude = base.transform_magnitude;
    match parameter {
        SweepParameter::N => n_train = value as usize,
        SweepParameter::Features => spec.features = value as usize,
        SweepParameter::TransformMagnitude => magnitude = value,
        SweepParameter::RepresentationScale => spec.representation_scale = value,
    }
    let streams = SeedStream::new(seed);
    let vocab = spec.build(&mut streams.stream("vocab"))?;
    let transforms = TransformSet::random(&vocab, base.transform_count, magnitude, &mut streams.stream("transforms"))?;
    let (data, test) = if base.augment {
        let identity = TransformSet::identity(&vocab);
        let train = sample_dataset(&vocab, n_train, base.patches, &identity, seed)?;
        let test_seed = SeedStream::new(seed).child("test").seed();
        let test = sample_dataset(&vocab, base.n_test, base.patches, &transforms, test_seed)?;
        (train, test)
    } else {
        let sizes = SplitSizes {
            train: n_train,
            holdout: 0,
            temperature_holdout: 0,
            test: base.n_test,
        };
        let data = sample_splits(&vocab, &sizes, base.patches, &transforms, seed)?;
        let test = data.split(Split::Test)?;
        (data, test)
    };
    let mut arch = Architecture::patchwise(
        base.patches,
        vocab.patch_dim,
        base.hidden.clone(),
        base.feature_dim,
        vocab.classes,
    );
    arch.head = base.head;
    let mut net = init_network(arch, seed)?;
    let mut train_cfg = base.train.clone();
    train_cfg.seed = seed;
    train_cfg.checkpoint_every = 0;
    if base.augment {
        train_cfg.augment = Some(transforms.clone());
    }
    train_teacher(&mut net, &data, &train_cfg, None)?;
    let err = distribution_error(&net, &test, PNorm::L1)?;
    let test_accuracy = accuracy(&net.predict_rows(test.inputs(), test.len(), 512)?.probs, test.labels());
    let lipschitz_extractor: f64 = net
        .weights()
        .filter(|(name, _)| *name != "classifier")
        .map(|(_, w)| lipschitz_bound(w))
        .product();
    let terms = bound_terms(&BoundInputs {
        classes: vocab.classes,
        n: n_train,
        patches: base.patches,
        features: vocab.len(),
        delta: base.delta,
        lipschitz_extractor,
        lipschitz_transform: transforms.magnitude_bound,
        nu: spec.representation_scale,
    })?;
    Ok(SweepRow {
        value,
        seed,
        distribution_error: err,
        test_accuracy,
        lipschitz_extractor,
        terms,
    })
}
