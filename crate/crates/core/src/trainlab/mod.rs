//! Teacher training (standard, regularized, and ablations) and student
//! training by vanilla knowledge distillation.

mod config;
mod kd;
mod record;
mod student;
mod teacher;

pub use config::{config_hash, DistillConfig, TeacherMode, TeacherTrainConfig};
pub use kd::{kd_loss, kd_loss_grad, kd_term, teacher_logits};
pub use record::{EpochLog, RunKind, RunRecord};
pub use student::{train_student, train_student_from_checkpoint, OracleTeacher, Teacher};
pub use teacher::{init_network, train_teacher, train_teacher_with};

use crate::datagen::{MixedFeatureDataset, Split, TransformSet};
use crate::error::Result;
use crate::evalcal::{accuracy, distribution_error_of, PNorm};
use crate::netlib::Network;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Training examples, and the split used for per-epoch test accuracy
/// (test if present, otherwise holdout).
fn train_and_eval(data: &MixedFeatureDataset) -> Result<(MixedFeatureDataset, Option<MixedFeatureDataset>)> {
    let train = match data.range_of(Split::Train) {
        Some(_) => data.split(Split::Train)?,
        None => data.clone(),
    };
    let eval = [Split::Test, Split::Holdout]
        .into_iter()
        .find(|s| data.range_of(*s).is_some_and(|r| !r.is_empty()))
        .map(|s| data.split(s))
        .transpose()?;
    Ok((train, eval))
}

/// Inputs of `idx`, with every patch passed through a transform drawn from
/// `augment` when given.
fn batch_inputs(
    data: &MixedFeatureDataset,
    idx: &[usize],
    augment: Option<&TransformSet>,
    rng: &mut Rng,
) -> Tensor {
    let mut x = data.batch_inputs(idx);
    if let Some(set) = augment {
        let b = data.patch_dim;
        let mut out = vec![0.0; b];
        for patch in x.data_mut().chunks_mut(b) {
            set.pick(rng).apply_into(patch, &mut out);
            patch.copy_from_slice(&out);
        }
    }
    x
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * classes + y] = 1.0;
    }
    t
}

/// Accuracy on `data` and, when it carries ground truth, the mean L1
/// distance of the renormalized predictions to the true distributions.
fn evaluate(net: &Network, data: &MixedFeatureDataset) -> Result<(f64, Option<f64>)> {
    let pred = net.predict_rows(&data.inputs, data.len(), 512)?;
    let acc = accuracy(&pred.probs, data.labels());
    let dist = if data.has_ground_truth() {
        Some(distribution_error_of(&pred.probs, data, PNorm::L1)?)
    } else {
        None
    };
    Ok((acc, dist))
}
