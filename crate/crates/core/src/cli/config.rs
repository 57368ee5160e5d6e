//! The JSON experiment config and its resolution into concrete run configs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    load_external, sample_splits, ExternalSource, FeatureVocabulary, Layout, MixedFeatureDataset,
    SplitSizes, TransformSet, VocabularySpec,
};
use crate::error::{Error, Result};
use crate::evalcal::PNorm;
use crate::netlib::{Architecture, Head, NetworkKind};
use crate::regularize::{ScheduleKind, ScheduleSpec};
use crate::rng::SeedStream;
use crate::tensor::OptimizerConfig;
use crate::theory::{SweepBase, SweepParameter, TheoremSweepConfig};
use crate::trainlab::{DistillConfig, TeacherMode, TeacherTrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

fn config_err(path: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub teacher: TeacherSection,
    #[serde(default)]
    pub student: StudentSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub theory: TheorySection,
}

/// Where examples come from. Exactly one of `vocab`, `vocabulary` and
/// `external` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// A randomly generated vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<VocabularySpec>,
    /// A fully specified vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<FeatureVocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalSource>,
    /// Class count for external data; inferred from the labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    pub splits: SplitSizes,
    /// `M`, the number of patches per input.
    #[serde(default = "one")]
    pub patches: usize,
    #[serde(default)]
    pub transforms: TransformSection,
    /// Sample every split untransformed and apply transforms on the fly
    /// while training instead.
    #[serde(default)]
    pub augment: bool,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSection {
    pub count: usize,
    pub magnitude: f64,
}

impl Default for TransformSection {
    fn default() -> Self {
        Self {
            count: 1,
            magnitude: 0.0,
        }
    }
}

/// Architecture without the data-dependent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub kind: NetworkKind,
    /// Defaults to the modified softmax for patchwise networks and the
    /// standard softmax otherwise.
    #[serde(default)]
    pub head: Option<Head>,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub feature_dim: usize,
}

impl NetworkSpec {
    fn mlp(hidden: Vec<usize>) -> Self {
        Self {
            kind: NetworkKind::GenericMlp,
            head: None,
            hidden,
            feature_dim: 0,
        }
    }

    fn patchwise(hidden: Vec<usize>, feature_dim: usize) -> Self {
        Self {
            kind: NetworkKind::Patchwise,
            head: None,
            hidden,
            feature_dim,
        }
    }

    fn resolved_head(&self) -> Head {
        self.head.unwrap_or(match self.kind {
            NetworkKind::Patchwise => Head::ModifiedSoftmax,
            NetworkKind::GenericMlp => Head::StandardSoftmax,
        })
    }

    pub fn architecture(&self, patches: usize, patch_dim: usize, classes: usize) -> Architecture {
        Architecture {
            kind: self.kind,
            head: self.resolved_head(),
            patches,
            patch_dim,
            hidden: self.hidden.clone(),
            feature_dim: self.feature_dim,
            classes,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        self.architecture(1, 1, 1)
            .validate()
            .map_err(|e| config_err(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub architecture: NetworkSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: TeacherMode,
    pub lambda_lr: f64,
    pub lambda_cr_max: f64,
    pub cr_schedule: ScheduleKind,
    pub checkpoint_every: usize,
    /// Defaults to momentum SGD with step decay scaled to `epochs`.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self {
            architecture: NetworkSpec::mlp(vec![128, 128]),
            epochs: 60,
            batch_size: 64,
            mode: TeacherMode::Standard,
            lambda_lr: 1e-5,
            lambda_cr_max: 1.0,
            cr_schedule: ScheduleKind::Linear,
            checkpoint_every: 10,
            optimizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentSection {
    pub architecture: NetworkSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub temperature: f64,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

impl Default for StudentSection {
    fn default() -> Self {
        Self {
            architecture: NetworkSpec::mlp(vec![32]),
            epochs: 40,
            batch_size: 64,
            alpha: 0.5,
            temperature: 4.0,
            optimizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub bins: usize,
    pub norms: Vec<PNorm>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            bins: 15,
            norms: vec![PNorm::L1, PNorm::L2, PNorm::Linf],
        }
    }
}

/// A theorem sweep. Unset fields fall back to the data and teacher
/// sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: SweepParameter,
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub vocab: Option<VocabularySpec>,
    /// Must be patchwise.
    #[serde(default)]
    pub architecture: Option<NetworkSpec>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

fn default_delta() -> f64 {
    0.1
}

impl SweepSection {
    fn default_for(parameter: SweepParameter, grid: Vec<f64>) -> Self {
        Self {
            parameter,
            grid,
            seeds: (0..5).collect(),
            delta: 0.1,
            vocab: None,
            architecture: Some(NetworkSpec::patchwise(vec![32], 16)),
            epochs: Some(30),
        }
    }
}

/// Settings of the lemma verifiers run by `verify-theory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub lemma1_steps: usize,
    pub lemma1_learning_rate: f64,
    pub lemma1_tolerance: f64,
    pub lemma2_grid: Vec<usize>,
    pub lemma2_seeds: Vec<u64>,
    pub lemma2_slope_tolerance: f64,
    /// Vocabulary for the mixing check; its `features` is replaced by each
    /// grid value.
    pub lemma3_vocab: VocabularySpec,
    pub lemma3_features: Vec<usize>,
    pub lemma3_patches: usize,
    pub lemma3_n: usize,
    pub lemma3_seeds: Vec<u64>,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            lemma1_steps: 5000,
            lemma1_learning_rate: 0.5,
            lemma1_tolerance: 1e-3,
            lemma2_grid: vec![500, 2000, 8000, 32000],
            lemma2_seeds: (0..5).collect(),
            lemma2_slope_tolerance: 0.1,
            lemma3_vocab: VocabularySpec {
                features: 8,
                classes: 4,
                patch_dim: 2,
                concentration: 1.0,
                mean_spread: 1.0,
                representation_scale: 0.1,
                layout: Layout::Manifold {
                    sharpness: 3.0,
                    window: 2,
                },
                sampling_weights: None,
            },
            lemma3_features: vec![8, 16, 32, 64],
            lemma3_patches: 3,
            lemma3_n: 20000,
            lemma3_seeds: (0..5).collect(),
        }
    }
}

impl Default for ExperimentConfig {
    /// A small stock experiment: `|Z| = 8`, `K = 3`, `M = 2`, `N = 2000`.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: DataSection {
                vocab: Some(VocabularySpec {
                    features: 8,
                    classes: 3,
                    patch_dim: 8,
                    concentration: 1.0,
                    mean_spread: 1.0,
                    representation_scale: 0.1,
                    layout: Layout::Random,
                    sampling_weights: None,
                }),
                vocabulary: None,
                external: None,
                classes: None,
                splits: SplitSizes {
                    train: 2000,
                    holdout: 500,
                    temperature_holdout: 500,
                    test: 1000,
                },
                patches: 2,
                transforms: TransformSection::default(),
                augment: false,
            },
            teacher: TeacherSection::default(),
            student: StudentSection::default(),
            eval: EvalSection::default(),
            sweep: None,
            theory: TheorySection::default(),
        }
    }
}

/// Command-line overrides of leaf values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub mode: Option<TeacherMode>,
}

impl ExperimentConfig {
    /// Parses a config document; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(a) = o.alpha {
            self.student.alpha = a;
        }
        if let Some(t) = o.temperature {
            self.student.temperature = t;
        }
        if let Some(m) = o.mode {
            self.teacher.mode = m;
        }
    }

    /// Fills every defaulted optional value so the serialized form records
    /// exactly what ran.
    pub fn resolve(&mut self) {
        let t = &mut self.teacher;
        t.architecture.head = Some(t.architecture.resolved_head());
        t.optimizer.get_or_insert_with(|| OptimizerConfig::scaled_to(t.epochs));
        let s = &mut self.student;
        s.architecture.head = Some(s.architecture.resolved_head());
        s.optimizer.get_or_insert_with(|| OptimizerConfig::scaled_to(s.epochs));
        if let Some(sw) = &mut self.sweep {
            if let Some(a) = &mut sw.architecture {
                a.head = Some(a.resolved_head());
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        self.validate_data()?;
        let t = &self.teacher;
        t.architecture.validate("teacher.architecture")?;
        if t.epochs == 0 {
            return Err(config_err("teacher.epochs", "must be positive"));
        }
        if t.batch_size == 0 {
            return Err(config_err("teacher.batch_size", "must be positive"));
        }
        if !(t.lambda_lr >= 0.0 && t.lambda_lr.is_finite()) {
            return Err(config_err("teacher.lambda_lr", "must be a nonnegative number"));
        }
        if !(t.lambda_cr_max >= 0.0 && t.lambda_cr_max.is_finite()) {
            return Err(config_err("teacher.lambda_cr_max", "must be a nonnegative number"));
        }
        if let Some(o) = &t.optimizer {
            o.validate().map_err(|e| config_err("teacher.optimizer", e.to_string()))?;
        }
        let s = &self.student;
        s.architecture.validate("student.architecture")?;
        if !(0.0..=1.0).contains(&s.alpha) {
            return Err(config_err("student.alpha", format!("must lie in [0, 1], got {}", s.alpha)));
        }
        if !(s.temperature > 0.0 && s.temperature.is_finite()) {
            return Err(config_err("student.temperature", format!("must be positive, got {}", s.temperature)));
        }
        if s.epochs == 0 {
            return Err(config_err("student.epochs", "must be positive"));
        }
        if s.batch_size == 0 {
            return Err(config_err("student.batch_size", "must be positive"));
        }
        if let Some(o) = &s.optimizer {
            o.validate().map_err(|e| config_err("student.optimizer", e.to_string()))?;
        }
        if self.eval.bins == 0 {
            return Err(config_err("eval.bins", "must be positive"));
        }
        if let Some(sw) = &self.sweep {
            let cfg = self.sweep_config_for(sw).map_err(|e| match e {
                Error::Config { .. } => e,
                other => config_err("sweep", other.to_string()),
            })?;
            cfg.validate().map_err(|e| config_err("sweep", e.to_string()))?;
        }
        let th = &self.theory;
        if th.lemma1_steps == 0 {
            return Err(config_err("theory.lemma1_steps", "must be positive"));
        }
        if th.lemma2_grid.len() < 2 {
            return Err(config_err("theory.lemma2_grid", "needs at least two values"));
        }
        if th.lemma2_seeds.is_empty() {
            return Err(config_err("theory.lemma2_seeds", "needs at least one seed"));
        }
        if th.lemma3_features.len() < 2 {
            return Err(config_err("theory.lemma3_features", "needs at least two values"));
        }
        if th.lemma3_patches == 0 {
            return Err(config_err("theory.lemma3_patches", "must be positive"));
        }
        if th.lemma3_seeds.is_empty() {
            return Err(config_err("theory.lemma3_seeds", "needs at least one seed"));
        }
        Ok(())
    }

    fn validate_data(&self) -> Result<()> {
        let d = &self.data;
        let sources = [d.vocab.is_some(), d.vocabulary.is_some(), d.external.is_some()];
        if sources.iter().filter(|&&b| b).count() != 1 {
            return Err(config_err(
                "data",
                "exactly one of `vocab`, `vocabulary` and `external` must be set",
            ));
        }
        if let Some(v) = &d.vocab {
            if v.features == 0 {
                return Err(config_err("data.vocab.features", "must be positive"));
            }
            if v.classes == 0 {
                return Err(config_err("data.vocab.classes", "must be positive"));
            }
            if v.patch_dim == 0 {
                return Err(config_err("data.vocab.patch_dim", "must be positive"));
            }
            if !(v.concentration > 0.0) {
                return Err(config_err("data.vocab.concentration", "must be positive"));
            }
            if !(v.representation_scale >= 0.0) {
                return Err(config_err("data.vocab.representation_scale", "must be nonnegative"));
            }
            if let Some(w) = &v.sampling_weights {
                if w.len() != v.features {
                    return Err(config_err(
                        "data.vocab.sampling_weights",
                        format!("has {} entries for {} features", w.len(), v.features),
                    ));
                }
                if w.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                    return Err(config_err("data.vocab.sampling_weights", "entries must be nonnegative"));
                }
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(config_err("data.vocab.sampling_weights", format!("sums to {s}, expected 1")));
                }
            }
        }
        if let Some(v) = &d.vocabulary {
            v.validate().map_err(|e| config_err("data.vocabulary", e.to_string()))?;
        }
        if d.external.is_none() {
            if d.splits.train == 0 {
                return Err(config_err("data.splits.train", "must be positive"));
            }
            if d.patches == 0 {
                return Err(config_err("data.patches", "must be positive"));
            }
        }
        if d.transforms.count == 0 {
            return Err(config_err("data.transforms.count", "must be positive"));
        }
        if !(d.transforms.magnitude >= 0.0 && d.transforms.magnitude.is_finite()) {
            return Err(config_err("data.transforms.magnitude", "must be a nonnegative number"));
        }
        Ok(())
    }

    pub fn streams(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    /// Seed used to initialize the student, distinct from the teacher's.
    pub fn student_seed(&self) -> u64 {
        self.streams().child("student").seed()
    }

    fn vocabulary(&self) -> Result<Option<FeatureVocabulary>> {
        if let Some(v) = &self.data.vocabulary {
            return Ok(Some(v.clone()));
        }
        match &self.data.vocab {
            Some(spec) => spec.build(&mut self.streams().stream("vocab")).map(Some),
            None => Ok(None),
        }
    }

    /// The dataset described by the data section, plus the transforms to
    /// apply during training when `augment` is set.
    pub fn dataset(&self) -> Result<(MixedFeatureDataset, Option<TransformSet>)> {
        let d = &self.data;
        if let Some(src) = &d.external {
            return Ok((load_external(src, d.classes)?, None));
        }
        let vocab = self.vocabulary()?.expect("validated data source");
        let transforms = if d.transforms.magnitude == 0.0 {
            TransformSet::identity(&vocab)
        } else {
            TransformSet::random(
                &vocab,
                d.transforms.count,
                d.transforms.magnitude,
                &mut self.streams().stream("transforms"),
            )?
        };
        if d.augment {
            let data = sample_splits(&vocab, &d.splits, d.patches, &TransformSet::identity(&vocab), self.seed)?;
            Ok((data, Some(transforms)))
        } else {
            Ok((sample_splits(&vocab, &d.splits, d.patches, &transforms, self.seed)?, None))
        }
    }

    pub fn teacher_config(&self, augment: Option<TransformSet>) -> TeacherTrainConfig {
        let t = &self.teacher;
        TeacherTrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer.clone().unwrap_or_else(|| OptimizerConfig::scaled_to(t.epochs)),
            lambda_lr: t.lambda_lr,
            cr_schedule: ScheduleSpec {
                kind: t.cr_schedule,
                lambda_max: t.lambda_cr_max,
                total_epochs: t.epochs,
            },
            mode: t.mode,
            checkpoint_every: t.checkpoint_every,
            seed: self.seed,
            augment,
        }
    }

    pub fn distill_config(&self, augment: Option<TransformSet>) -> DistillConfig {
        let s = &self.student;
        DistillConfig {
            alpha: s.alpha,
            temperature: s.temperature,
            epochs: s.epochs,
            batch_size: s.batch_size,
            optimizer: s.optimizer.clone().unwrap_or_else(|| OptimizerConfig::scaled_to(s.epochs)),
            seed: self.seed,
            augment,
        }
    }

    /// The sweep to run: the configured one, or an `N` sweep over
    /// `{500, 2000, 8000}` with five seeds.
    pub fn sweep_section(&self) -> SweepSection {
        self.sweep
            .clone()
            .unwrap_or_else(|| SweepSection::default_for(SweepParameter::N, vec![500.0, 2000.0, 8000.0]))
    }

    pub fn sweep_config(&self) -> Result<TheoremSweepConfig> {
        self.sweep_config_for(&self.sweep_section())
    }

    fn sweep_config_for(&self, sw: &SweepSection) -> Result<TheoremSweepConfig> {
        let vocab = match (&sw.vocab, &self.data.vocab) {
            (Some(v), _) | (None, Some(v)) => v.clone(),
            (None, None) => {
                return Err(config_err(
                    "sweep.vocab",
                    "required unless data.vocab is a vocabulary spec",
                ))
            }
        };
        let arch = sw.architecture.clone().unwrap_or_else(|| self.teacher.architecture.clone());
        if arch.kind != NetworkKind::Patchwise {
            return Err(config_err("sweep.architecture.kind", "theorem sweeps need a patchwise network"));
        }
        arch.validate("sweep.architecture")?;
        let epochs = sw.epochs.unwrap_or(self.teacher.epochs);
        let mut teacher = self.clone();
        teacher.teacher.epochs = epochs;
        teacher.teacher.optimizer = None;
        let train = teacher.teacher_config(None);
        Ok(TheoremSweepConfig {
            parameter: sw.parameter,
            grid: sw.grid.clone(),
            seeds: sw.seeds.clone(),
            base: SweepBase {
                vocab,
                n_train: self.data.splits.train,
                n_test: self.data.splits.test.max(1),
                patches: self.data.patches,
                transform_count: self.data.transforms.count,
                transform_magnitude: self.data.transforms.magnitude,
                augment: self.data.augment,
                hidden: arch.hidden.clone(),
                feature_dim: arch.feature_dim,
                head: arch.resolved_head(),
                train,
                delta: sw.delta,
            },
        })
    }
}
