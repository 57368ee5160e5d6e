//! Checkpoint directories: `manifest.json` plus one little-endian `f64` file
//! per parameter (and its momentum), optionally with a prediction buffer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Architecture, Network};
use crate::error::{Error, Result};
use crate::regularize::PredictionBuffer;
use crate::store::{ensure_dir, read_f64s, read_json, write_f64s, write_json};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "kdlab-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub parameters: Vec<ParamEntry>,
    pub buffer: Option<BufferEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub momentum_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferEntry {
    pub rows: usize,
    pub classes: usize,
    pub mean_file: String,
    pub counts_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub buffer: Option<PredictionBuffer>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        ensure_dir(dir)?;
        let mut parameters = Vec::new();
        for p in &self.network.params {
            let file = format!("{}.f64", p.name);
            let momentum_file = format!("{}.momentum.f64", p.name);
            write_f64s(&dir.join(&file), p.tensor.data())?;
            write_f64s(&dir.join(&momentum_file), &p.momentum)?;
            parameters.push(ParamEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                file,
                momentum_file,
            });
        }
        let buffer = match &self.buffer {
            Some(b) => {
                write_f64s(&dir.join("buffer.mean.f64"), b.means())?;
                let counts: Vec<f64> = b.counts().iter().map(|&c| c as f64).collect();
                write_f64s(&dir.join("buffer.counts.f64"), &counts)?;
                Some(BufferEntry {
                    rows: b.rows(),
                    classes: b.classes(),
                    mean_file: "buffer.mean.f64".into(),
                    counts_file: "buffer.counts.f64".into(),
                })
            }
            None => None,
        };
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            architecture: self.network.arch.clone(),
            epoch: self.epoch,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            parameters,
            buffer,
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path));
        }
        let manifest: CheckpointManifest = read_json(&manifest_path)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("not a checkpoint: format `{}`", manifest.format)));
        }
        let mut network = Network::zeros(manifest.architecture.clone())?;
        if network.params.len() != manifest.parameters.len() {
            return Err(Error::invalid("checkpoint parameter count does not match architecture"));
        }
        for (p, entry) in network.params.iter_mut().zip(&manifest.parameters) {
            if p.name != entry.name || p.tensor.shape() != entry.shape.as_slice() {
                return Err(Error::invalid(format!(
                    "checkpoint parameter `{}` {:?} does not match `{}` {:?}",
                    entry.name,
                    entry.shape,
                    p.name,
                    p.tensor.shape()
                )));
            }
            let n = p.tensor.numel();
            p.tensor = Tensor::new(entry.shape.clone(), read_f64s(&dir.join(&entry.file), n)?)?;
            p.momentum = read_f64s(&dir.join(&entry.momentum_file), n)?;
        }
        let buffer = match &manifest.buffer {
            Some(b) => {
                let means = read_f64s(&dir.join(&b.mean_file), b.rows * b.classes)?;
                let counts = read_f64s(&dir.join(&b.counts_file), b.rows)?
                    .into_iter()
                    .map(|c| c as u64)
                    .collect();
                Some(PredictionBuffer::from_parts(b.rows, b.classes, means, counts)?)
            }
            None => None,
        };
        Ok(Self {
            network,
            epoch: manifest.epoch,
            seed: manifest.seed,
            config_hash: manifest.config_hash,
            buffer,
        })
    }
}

/// Directory name used for the checkpoint of `epoch` under a run directory.
pub fn checkpoint_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("epoch-{epoch:04}"))
}
