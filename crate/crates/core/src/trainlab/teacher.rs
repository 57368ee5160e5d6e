use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::{batch_inputs, config_hash, evaluate, one_hot, train_and_eval, EpochLog, RunKind, RunRecord, TeacherTrainConfig};
use crate::datagen::MixedFeatureDataset;
use crate::error::{Error, Result};
use crate::evalcal::argmax;
use crate::netlib::{checkpoint_dir, lipschitz_report, lipschitz_term, Architecture, Checkpoint, Network};
use crate::regularize::{consistency_term, cr_weight, PredictionBuffer};
use crate::rng::SeedStream;
use crate::tensor::{lr_at, sgd_step, Graph};

/// A freshly initialized network drawn from the `init` stream of `seed`.
pub fn init_network(arch: Architecture, seed: u64) -> Result<Network> {
    Network::new(arch, &mut SeedStream::new(seed).stream("init"))
}

/// Trains `net` in place, saving checkpoints under `out_dir/checkpoints`
/// when a directory is given.
pub fn train_teacher(
    net: &mut Network,
    data: &MixedFeatureDataset,
    cfg: &TeacherTrainConfig,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    train_teacher_with(net, data, cfg, |ckpt| match out_dir {
        Some(dir) => {
            let path = checkpoint_dir(dir, ckpt.epoch);
            ckpt.save(&path)?;
            Ok(Some(path))
        }
        None => Ok(None),
    })
}

/// Like [`train_teacher`], handing every checkpoint to `on_checkpoint`,
/// which may return the path it was stored under.
pub fn train_teacher_with<F>(
    net: &mut Network,
    data: &MixedFeatureDataset,
    cfg: &TeacherTrainConfig,
    mut on_checkpoint: F,
) -> Result<RunRecord>
where
    F: FnMut(&Checkpoint) -> Result<Option<PathBuf>>,
{
    cfg.validate()?;
    check_compatible(net, data)?;
    let (train, eval) = train_and_eval(data)?;
    let n = train.len();
    if n == 0 {
        return Err(Error::invalid("training split is empty"));
    }
    let k = net.arch.classes;
    let streams = SeedStream::new(cfg.seed);
    let mut shuffle_rng = streams.stream("shuffle");
    let mut aug_rng = streams.stream("transforms");
    let hash = config_hash(cfg);

    let lam_lr = cfg.effective_lambda_lr();
    let schedule = cfg.effective_schedule();
    let use_lr = cfg.mode.uses_lipschitz();
    let mut buffer = cfg.mode.uses_consistency().then(|| PredictionBuffer::new(n, k));

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::new();

    for e in 0..cfg.epochs {
        let lr = lr_at(e, &cfg.optimizer);
        let lam_cr = if buffer.is_some() {
            cr_weight(&schedule, e.min(schedule.total_epochs))?
        } else {
            0.0
        };
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4]; // ce, lr, cr, total
        let mut hits = 0usize;

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = |detail: String| Error::Diverged {
                epoch: e + 1,
                batch: b,
                detail,
            };
            let x = batch_inputs(&train, idx, cfg.augment.as_ref(), &mut aug_rng);
            let labels: Vec<usize> = idx.iter().map(|&i| train.label(i)).collect();
            let bs = idx.len() as f64;

            let mut g = Graph::new();
            let step = (|| {
                let ids = net.tracked_ids(&mut g);
                let xi = g.input(x);
                let lp = net.log_probs(&mut g, &ids, xi)?;
                let oh = g.input(one_hot(&labels, k));
                let picked = g.mul(lp, oh)?;
                let s = g.sum(picked)?;
                let ce = g.scale(s, -1.0 / bs)?;
                let mut loss = ce;
                let mut lr_val = 0.0;
                if use_lr {
                    if lam_lr > 0.0 {
                        let lt = lipschitz_term(net, &mut g, &ids)?;
                        lr_val = g.value(lt).item();
                        let w = g.scale(lt, lam_lr)?;
                        loss = g.add(loss, w)?;
                    } else {
                        lr_val = lipschitz_report(net).total;
                    }
                }
                let mut cr_val = 0.0;
                let mut probs = None;
                if let Some(buf) = &buffer {
                    let p = g.softmax(lp)?;
                    probs = Some(p);
                    if e > 0 {
                        let ct = consistency_term(&mut g, p, buf.slice(idx)?)?;
                        cr_val = g.value(ct).item();
                        if lam_cr > 0.0 {
                            let w = g.scale(ct, lam_cr)?;
                            loss = g.add(loss, w)?;
                        }
                    }
                }
                let grads = g.backward(loss)?;
                Ok((lp, probs, g.value(ce).item(), lr_val, cr_val, g.value(loss).item(), grads))
            })();
            let (lp, probs, ce, lr_val, cr_val, total, grads) = step.map_err(|err| match err {
                Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
                other => other,
            })?;
            if !total.is_finite() {
                return Err(diverged(format!("loss is {total}")));
            }

            let lpv = g.value(lp);
            hits += labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| argmax(lpv.row(r)) == y)
                .count();
            if let (Some(buf), Some(p)) = (buffer.as_mut(), probs) {
                buf.update(idx, g.value(p))?;
            }
            for (acc, v) in sums.iter_mut().zip([ce, lr_val, cr_val, total]) {
                *acc += v * bs;
            }
            sgd_step(&mut net.params, &grads, lr, &cfg.optimizer)?;
            if net.params.iter().any(|p| !p.tensor.is_finite()) {
                return Err(diverged("parameters became non-finite".into()));
            }
        }

        let (test_acc, test_dist_error) = match &eval {
            Some(ev) => {
                let (a, d) = evaluate(net, ev)?;
                (Some(a), d)
            }
            None => (None, None),
        };
        let nf = n as f64;
        epochs.push(EpochLog {
            epoch: e + 1,
            lr,
            ce: sums[0] / nf,
            lr_penalty: sums[1] / nf,
            cr_penalty: sums[2] / nf,
            lambda_cr: lam_cr,
            train_acc: hits as f64 / nf,
            test_acc,
            test_dist_error,
            kd: 0.0,
            total: sums[3] / nf,
        });

        let done = e + 1;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) || done == cfg.epochs {
            let ckpt = Checkpoint {
                network: net.clone(),
                epoch: done,
                seed: cfg.seed,
                config_hash: hash.clone(),
                buffer: buffer.clone(),
            };
            if let Some(path) = on_checkpoint(&ckpt)? {
                checkpoints.push(path);
            }
        }
    }

    let last = epochs.last().expect("at least one epoch");
    Ok(RunRecord {
        kind: RunKind::Teacher,
        mode: Some(cfg.mode),
        seed: cfg.seed,
        config_hash: hash,
        lambda_lr: lam_lr,
        alpha: None,
        temperature: None,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        epochs,
        checkpoints,
        final_lipschitz: lipschitz_report(net).total,
    })
}

pub(super) fn check_compatible(net: &Network, data: &MixedFeatureDataset) -> Result<()> {
    if net.arch.input_width() != data.input_width() || net.arch.classes != data.classes {
        return Err(Error::shape(
            "train",
            format!(
                "network expects width {} and {} classes, data has width {} and {} classes",
                net.arch.input_width(),
                net.arch.classes,
                data.input_width(),
                data.classes
            ),
        ));
    }
    Ok(())
}
