use std::path::Path;

use rand::seq::SliceRandom;

use super::teacher::check_compatible;
use super::{batch_inputs, config_hash, evaluate, kd_term, train_and_eval, DistillConfig, EpochLog, RunKind, RunRecord};
use crate::datagen::{MixedFeatureDataset, Split};
use crate::error::{Error, Result};
use crate::evalcal::argmax;
use crate::netlib::{lipschitz_report, Checkpoint, Network};
use crate::rng::SeedStream;
use crate::tensor::{lr_at, sgd_step, Graph, Tensor};

/// Source of soft labels for distillation.
pub trait Teacher {
    fn classes(&self) -> usize;
    /// Simplex rows for the batch `x`; `ids` index the training split.
    fn soft_labels(&self, x: &Tensor, ids: &[usize]) -> Result<Tensor>;
}

impl Teacher for Network {
    fn classes(&self) -> usize {
        self.arch.classes
    }

    fn soft_labels(&self, x: &Tensor, _ids: &[usize]) -> Result<Tensor> {
        Ok(self.predict(x)?.normalized())
    }
}

/// Predicts the exact true label distribution of each training example.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    classes: usize,
    truth: Vec<f64>,
}

impl OracleTeacher {
    pub fn new(data: &MixedFeatureDataset) -> Result<Self> {
        let train = match data.range_of(Split::Train) {
            Some(_) => data.split(Split::Train)?,
            None => data.clone(),
        };
        if !train.has_ground_truth() {
            return Err(Error::NoGroundTruth);
        }
        let truth = (0..train.len())
            .flat_map(|i| train.true_distribution(i).expect("ground truth").to_vec())
            .collect();
        Ok(Self {
            classes: train.classes,
            truth,
        })
    }
}

impl Teacher for OracleTeacher {
    fn classes(&self) -> usize {
        self.classes
    }

    fn soft_labels(&self, _x: &Tensor, ids: &[usize]) -> Result<Tensor> {
        let k = self.classes;
        let mut data = Vec::with_capacity(ids.len() * k);
        for &i in ids {
            data.extend_from_slice(&self.truth[i * k..(i + 1) * k]);
        }
        Tensor::new(vec![ids.len(), k], data)
    }
}

/// Distills `student` from a frozen teacher. Teacher predictions are taken
/// fresh on every (possibly transformed) batch.
pub fn train_student(
    student: &mut Network,
    teacher: &dyn Teacher,
    data: &MixedFeatureDataset,
    cfg: &DistillConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_compatible(student, data)?;
    if teacher.classes() != student.arch.classes {
        return Err(Error::invalid(format!(
            "teacher has {} classes, student has {}",
            teacher.classes(),
            student.arch.classes
        )));
    }
    let (train, eval) = train_and_eval(data)?;
    let n = train.len();
    if n == 0 {
        return Err(Error::invalid("training split is empty"));
    }
    let streams = SeedStream::new(cfg.seed);
    let mut shuffle_rng = streams.stream("shuffle");
    let mut aug_rng = streams.stream("transforms");
    let (alpha, tau) = (cfg.alpha, cfg.temperature);
    let k = student.arch.classes;

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let lr = lr_at(e, &cfg.optimizer);
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 3]; // ce, kd, total
        let mut hits = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = batch_inputs(&train, idx, cfg.augment.as_ref(), &mut aug_rng);
            let labels: Vec<usize> = idx.iter().map(|&i| train.label(i)).collect();
            let soft = if alpha < 1.0 {
                teacher.soft_labels(&x, idx)?
            } else {
                Tensor::from_raw(vec![idx.len(), k], vec![1.0 / k as f64; idx.len() * k])
            };
            let bs = idx.len() as f64;
            let mut g = Graph::new();
            let step = (|| {
                let ids = student.tracked_ids(&mut g);
                let xi = g.input(x);
                let lp = student.log_probs(&mut g, &ids, xi)?;
                let (total, ce, kd) = kd_term(&mut g, lp, &soft, &labels, alpha, tau)?;
                let grads = g.backward(total)?;
                Ok((lp, g.value(ce).item(), g.value(kd).item(), g.value(total).item(), grads))
            })();
            let (lp, ce, kd, total, grads) = step.map_err(|err| match err {
                Error::NonFinite { op } => Error::Diverged {
                    epoch: e + 1,
                    batch: b,
                    detail: format!("non-finite value in {op}"),
                },
                other => other,
            })?;
            let lpv = g.value(lp);
            hits += labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(lpv.row(r)) == y)
                .count();
            for (acc, v) in sums.iter_mut().zip([ce, kd, total]) {
                *acc += v * bs;
            }
            sgd_step(&mut student.params, &grads, lr, &cfg.optimizer)?;
        }
        let (test_acc, test_dist_error) = match &eval {
            Some(ev) => {
                let (a, d) = evaluate(student, ev)?;
                (Some(a), d)
            }
            None => (None, None),
        };
        let nf = n as f64;
        epochs.push(EpochLog {
            epoch: e + 1,
            lr,
            ce: sums[0] / nf,
            lr_penalty: 0.0,
            cr_penalty: 0.0,
            lambda_cr: 0.0,
            train_acc: hits as f64 / nf,
            test_acc,
            test_dist_error,
            kd: sums[1] / nf,
            total: sums[2] / nf,
        });
    }
    let last = epochs.last().expect("at least one epoch");
    Ok(RunRecord {
        kind: RunKind::Student,
        mode: None,
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        lambda_lr: 0.0,
        alpha: Some(alpha),
        temperature: Some(tau),
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        epochs,
        checkpoints: Vec::new(),
        final_lipschitz: lipschitz_report(student).total,
    })
}

/// Loads the teacher checkpoint in `dir` and distills from it.
pub fn train_student_from_checkpoint(
    student: &mut Network,
    dir: &Path,
    data: &MixedFeatureDataset,
    cfg: &DistillConfig,
) -> Result<RunRecord> {
    let ckpt = Checkpoint::load(dir)?;
    if ckpt.network.arch.input_width() != data.input_width() {
        return Err(Error::shape(
            "distill",
            format!(
                "teacher expects width {}, data has width {}",
                ckpt.network.arch.input_width(),
                data.input_width()
            ),
        ));
    }
    train_student(student, &ckpt.network, data, cfg)
}
