//! Mixed-feature datasets and the sampler that generates them.

use std::ops::Range;

use rand::Rng as _;
use rand_distr::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use super::{FeatureVocabulary, TransformSet};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
    TemperatureHoldout,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRange {
    pub split: Split,
    pub start: usize,
    pub end: usize,
}

/// Borrowed view of one example.
#[derive(Debug, Clone, Copy)]
pub struct MixedFeatureExample<'a> {
    /// `M x b` patch matrix, row-major.
    pub patches: &'a [f64],
    pub feature_names: Option<&'a [usize]>,
    pub label: usize,
    pub true_distribution: Option<&'a [f64]>,
}

/// Struct-of-arrays dataset; every example shares `M`, `b` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFeatureDataset {
    pub patches: usize,
    pub patch_dim: usize,
    pub classes: usize,
    pub(crate) inputs: Vec<f64>,
    pub(crate) labels: Vec<usize>,
    pub(crate) feature_names: Option<Vec<usize>>,
    pub(crate) true_distributions: Option<Vec<f64>>,
    pub vocabulary: Option<FeatureVocabulary>,
    pub seed: Option<u64>,
    pub splits: Vec<SplitRange>,
}

impl MixedFeatureDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        patches: usize,
        patch_dim: usize,
        classes: usize,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        feature_names: Option<Vec<usize>>,
        true_distributions: Option<Vec<f64>>,
        vocabulary: Option<FeatureVocabulary>,
        seed: Option<u64>,
        splits: Vec<SplitRange>,
    ) -> Result<Self> {
        let n = labels.len();
        let width = patches * patch_dim;
        if inputs.len() != n * width {
            return Err(Error::invalid(format!(
                "inputs hold {} values, expected {n} x {width}",
                inputs.len()
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != n * patches {
                return Err(Error::invalid("feature_names length mismatch"));
            }
        }
        if let Some(p) = &true_distributions {
            if p.len() != n * classes {
                return Err(Error::invalid("true_distributions length mismatch"));
            }
        }
        if labels.iter().any(|&y| y >= classes) {
            return Err(Error::invalid("label out of range"));
        }
        let mut covered = 0;
        for r in &splits {
            if r.start != covered || r.end < r.start {
                return Err(Error::invalid("split ranges must tile the index space in order"));
            }
            covered = r.end;
        }
        if covered != n {
            return Err(Error::invalid("split ranges must cover every example"));
        }
        Ok(Self {
            patches,
            patch_dim,
            classes,
            inputs,
            labels,
            feature_names,
            true_distributions,
            vocabulary,
            seed,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_width(&self) -> usize {
        self.patches * self.patch_dim
    }

    /// All inputs, row-major `n x (M*b)`.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.input_width();
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self, i: usize) -> Option<&[usize]> {
        self.feature_names
            .as_ref()
            .map(|v| &v[i * self.patches..(i + 1) * self.patches])
    }

    pub fn true_distribution(&self, i: usize) -> Option<&[f64]> {
        self.true_distributions
            .as_ref()
            .map(|v| &v[i * self.classes..(i + 1) * self.classes])
    }

    pub fn has_ground_truth(&self) -> bool {
        self.feature_names.is_some() && self.true_distributions.is_some()
    }

    pub fn example(&self, i: usize) -> MixedFeatureExample<'_> {
        MixedFeatureExample {
            patches: self.input(i),
            feature_names: self.feature_names(i),
            label: self.label(i),
            true_distribution: self.true_distribution(i),
        }
    }

    /// Inputs of the given examples as an `n x (M*b)` tensor.
    pub fn batch_inputs(&self, idx: &[usize]) -> Tensor {
        let w = self.input_width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.input(i));
        }
        Tensor::from_raw(vec![idx.len(), w], data)
    }

    pub fn range_of(&self, split: Split) -> Option<Range<usize>> {
        self.splits
            .iter()
            .find(|r| r.split == split)
            .map(|r| r.start..r.end)
    }

    /// Copy of the examples tagged `split`, re-tagged to start at zero.
    pub fn split(&self, split: Split) -> Result<MixedFeatureDataset> {
        let range = self
            .range_of(split)
            .ok_or_else(|| Error::invalid(format!("dataset has no {split:?} split")))?;
        Ok(self.subset(range, split))
    }

    fn subset(&self, range: Range<usize>, split: Split) -> MixedFeatureDataset {
        let w = self.input_width();
        let n = range.len();
        MixedFeatureDataset {
            patches: self.patches,
            patch_dim: self.patch_dim,
            classes: self.classes,
            inputs: self.inputs[range.start * w..range.end * w].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            feature_names: self
                .feature_names
                .as_ref()
                .map(|v| v[range.start * self.patches..range.end * self.patches].to_vec()),
            true_distributions: self
                .true_distributions
                .as_ref()
                .map(|v| v[range.start * self.classes..range.end * self.classes].to_vec()),
            vocabulary: self.vocabulary.clone(),
            seed: self.seed,
            splits: vec![SplitRange {
                split,
                start: 0,
                end: n,
            }],
        }
    }
}

/// Example counts per split for [`sample_splits`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    #[serde(default)]
    pub holdout: usize,
    #[serde(default)]
    pub temperature_holdout: usize,
    #[serde(default)]
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.holdout + self.temperature_holdout + self.test
    }
}

/// Draws `n` examples, all tagged as training data.
pub fn sample_dataset(
    vocab: &FeatureVocabulary,
    n: usize,
    m: usize,
    transforms: &TransformSet,
    seed: u64,
) -> Result<MixedFeatureDataset> {
    sample_splits(
        vocab,
        &SplitSizes {
            train: n,
            holdout: 0,
            temperature_holdout: 0,
            test: 0,
        },
        m,
        transforms,
        seed,
    )
}

/// Draws all splits from one seeded stream, in the order train, holdout,
/// temperature holdout, test. Empty splits are omitted.
pub fn sample_splits(
    vocab: &FeatureVocabulary,
    sizes: &SplitSizes,
    m: usize,
    transforms: &TransformSet,
    seed: u64,
) -> Result<MixedFeatureDataset> {
    vocab.validate()?;
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    if transforms.transforms.iter().any(|t| t.dim() != vocab.patch_dim) {
        return Err(Error::invalid("transform dimension differs from patch_dim"));
    }
    let n = sizes.total();
    let b = vocab.patch_dim;
    let k = vocab.classes;
    let streams = SeedStream::new(seed);
    let mut rng = streams.stream("data");

    let mut inputs = Vec::with_capacity(n * m * b);
    let mut labels = Vec::with_capacity(n);
    let mut names_all = Vec::with_capacity(n * m);
    let mut truth = Vec::with_capacity(n * k);
    let mut raw = vec![0.0; b];
    let mut out = vec![0.0; b];

    for _ in 0..n {
        let names = vocab.draw_names(m, &mut rng);
        for &z in &names {
            let f = &vocab.features[z];
            for (r, mu) in raw.iter_mut().zip(&f.representation_mean) {
                *r = mu + f.representation_scale * rng.gen_range(-1.0..=1.0);
            }
            transforms.pick(&mut rng).apply_into(&raw, &mut out);
            inputs.extend_from_slice(&out);
        }
        let p = vocab.true_label_distribution(&names)?;
        let y = WeightedIndex::new(&p)
            .map_err(|e| Error::invalid(format!("label distribution: {e}")))?
            .sample(&mut rng);
        labels.push(y);
        names_all.extend_from_slice(&names);
        truth.extend_from_slice(&p);
    }

    let mut splits = Vec::new();
    let mut start = 0;
    for (split, count) in [
        (Split::Train, sizes.train),
        (Split::Holdout, sizes.holdout),
        (Split::TemperatureHoldout, sizes.temperature_holdout),
        (Split::Test, sizes.test),
    ] {
        if count > 0 || (split == Split::Train && n == 0) {
            splits.push(SplitRange {
                split,
                start,
                end: start + count,
            });
            start += count;
        }
    }

    MixedFeatureDataset::from_parts(
        m,
        b,
        k,
        inputs,
        labels,
        Some(names_all),
        Some(truth),
        Some(vocab.clone()),
        Some(seed),
        splits,
    )
}

/// Exact occurrence counts of feature names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCounts {
    /// `N_z`: number of inputs containing `z` at least once.
    pub inclusion: Vec<usize>,
    /// Number of patch slots carrying `z` (counts repeats within an input).
    pub occurrences: Vec<usize>,
    /// `pairs[z][z']`: inputs containing both; the diagonal equals `inclusion`.
    pub pairs: Vec<Vec<usize>>,
}

pub fn feature_cooccurrence_stats(data: &MixedFeatureDataset) -> Result<FeatureCounts> {
    let names = data.feature_names.as_ref().ok_or(Error::NoGroundTruth)?;
    let z_count = match &data.vocabulary {
        Some(v) => v.len(),
        None => names.iter().max().map_or(0, |&z| z + 1),
    };
    let mut inclusion = vec![0; z_count];
    let mut occurrences = vec![0; z_count];
    let mut pairs = vec![vec![0; z_count]; z_count];
    let mut present = vec![false; z_count];
    for row in names.chunks(data.patches.max(1)) {
        present.iter_mut().for_each(|p| *p = false);
        for &z in row {
            occurrences[z] += 1;
            present[z] = true;
        }
        let here: Vec<usize> = (0..z_count).filter(|&z| present[z]).collect();
        for &a in &here {
            inclusion[a] += 1;
            for &b in &here {
                pairs[a][b] += 1;
            }
        }
    }
    Ok(FeatureCounts {
        inclusion,
        occurrences,
        pairs,
    })
}
