//! Dataset directories: `manifest.json` plus raw little-endian `f64` arrays.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureVocabulary, MixedFeatureDataset, SplitRange};
use crate::error::{Error, Result};
use crate::store::{ensure_dir, read_f64s, read_json, write_f64s, write_json};

pub const DATASET_FORMAT: &str = "kdlab-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub examples: usize,
    pub patches: usize,
    pub patch_dim: usize,
    pub classes: usize,
    pub seed: Option<u64>,
    pub splits: Vec<SplitRange>,
    pub has_ground_truth: bool,
    pub vocabulary: Option<FeatureVocabulary>,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn as_index(v: Vec<f64>, what: &str) -> Result<Vec<usize>> {
    v.into_iter()
        .map(|x| {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(Error::invalid(format!("{what}: {x} is not an index")))
            }
        })
        .collect()
}

pub fn save_dataset(data: &MixedFeatureDataset, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    let n = data.len();
    let mut arrays = vec![
        ArrayEntry {
            name: "inputs".into(),
            file: "inputs.f64".into(),
            shape: vec![n, data.patches, data.patch_dim],
        },
        ArrayEntry {
            name: "labels".into(),
            file: "labels.f64".into(),
            shape: vec![n],
        },
    ];
    write_f64s(&dir.join("inputs.f64"), &data.inputs)?;
    write_f64s(&dir.join("labels.f64"), &as_f64(&data.labels))?;
    if let Some(names) = &data.feature_names {
        write_f64s(&dir.join("feature_names.f64"), &as_f64(names))?;
        arrays.push(ArrayEntry {
            name: "feature_names".into(),
            file: "feature_names.f64".into(),
            shape: vec![n, data.patches],
        });
    }
    if let Some(p) = &data.true_distributions {
        write_f64s(&dir.join("true_distributions.f64"), p)?;
        arrays.push(ArrayEntry {
            name: "true_distributions".into(),
            file: "true_distributions.f64".into(),
            shape: vec![n, data.classes],
        });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        examples: n,
        patches: data.patches,
        patch_dim: data.patch_dim,
        classes: data.classes,
        seed: data.seed,
        splits: data.splits.clone(),
        has_ground_truth: data.has_ground_truth(),
        vocabulary: data.vocabulary.clone(),
        arrays,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load_dataset(dir: &Path) -> Result<MixedFeatureDataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact(manifest_path));
    }
    let manifest: DatasetManifest = read_json(&manifest_path)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::invalid(format!("not a dataset directory: format `{}`", manifest.format)));
    }
    let find = |name: &str| manifest.arrays.iter().find(|a| a.name == name);
    let load = |name: &str| -> Result<Option<Vec<f64>>> {
        match find(name) {
            Some(a) => Ok(Some(read_f64s(&dir.join(&a.file), a.shape.iter().product())?)),
            None => Ok(None),
        }
    };
    let inputs = load("inputs")?.ok_or_else(|| Error::invalid("manifest lists no inputs array"))?;
    let labels = as_index(
        load("labels")?.ok_or_else(|| Error::invalid("manifest lists no labels array"))?,
        "labels",
    )?;
    let names = load("feature_names")?
        .map(|v| as_index(v, "feature_names"))
        .transpose()?;
    let truth = load("true_distributions")?;
    MixedFeatureDataset::from_parts(
        manifest.patches,
        manifest.patch_dim,
        manifest.classes,
        inputs,
        labels,
        names,
        truth,
        manifest.vocabulary,
        manifest.seed,
        manifest.splits,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_splits, Layout, SplitSizes, TransformSet, VocabularySpec};
    use crate::rng::SeedStream;

    #[test]
    fn dataset_directory_roundtrip() {
        let spec = VocabularySpec {
            features: 4,
            classes: 3,
            patch_dim: 2,
            concentration: 1.0,
            mean_spread: 1.0,
            representation_scale: 0.1,
            layout: Layout::Random,
            sampling_weights: None,
        };
        let v = spec.build(&mut SeedStream::new(1).stream("vocab")).unwrap();
        let sizes = SplitSizes {
            train: 20,
            holdout: 5,
            temperature_holdout: 5,
            test: 5,
        };
        let d = sample_splits(&v, &sizes, 2, &TransformSet::identity(&v), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn missing_manifest_is_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingArtifact(_))));
    }
}
