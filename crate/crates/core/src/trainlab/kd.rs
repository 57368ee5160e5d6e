use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, softmax_row, Graph, NodeId, Tensor};

const LOG_EPS: f64 = 1e-12;

/// Teacher logits recovered from probabilities: `log(p + 1e-12)`, shifted
/// to zero mean.
pub fn teacher_logits(probs: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = probs.iter().map(|p| (p + LOG_EPS).ln()).collect();
    let mean = z.iter().sum::<f64>() / z.len().max(1) as f64;
    z.iter_mut().for_each(|v| *v -= mean);
    z
}

/// `softmax(teacher_logits(probs) / τ)`.
fn teacher_soft(probs: &[f64], tau: f64) -> Vec<f64> {
    let mut z: Vec<f64> = teacher_logits(probs).into_iter().map(|v| v / tau).collect();
    softmax_row(&mut z);
    z
}

/// `α·CE(student, y) + (1 − α)·τ²·KL(softmax(t/τ) ‖ softmax(s/τ))` for one
/// example, where `t` are the teacher logits recovered from `teacher_probs`.
pub fn kd_loss(student_logits: &[f64], teacher_probs: &[f64], y: usize, alpha: f64, tau: f64) -> f64 {
    let ce = log_sum_exp(student_logits) - student_logits[y];
    if alpha == 1.0 {
        return ce;
    }
    let pt = teacher_soft(teacher_probs, tau);
    let scaled: Vec<f64> = student_logits.iter().map(|s| s / tau).collect();
    let lse = log_sum_exp(&scaled);
    let kl: f64 = pt
        .iter()
        .zip(&scaled)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, s)| p * (p.ln() - (s - lse)))
        .sum();
    alpha * ce + (1.0 - alpha) * tau * tau * kl
}

/// Gradient of [`kd_loss`] with respect to the student logits:
/// `α (softmax(s) − 1_y) + (1 − α) τ (softmax(s/τ) − softmax(t/τ))`.
pub fn kd_loss_grad(student_logits: &[f64], teacher_probs: &[f64], y: usize, alpha: f64, tau: f64) -> Vec<f64> {
    let mut ps = student_logits.to_vec();
    softmax_row(&mut ps);
    let mut pst: Vec<f64> = student_logits.iter().map(|s| s / tau).collect();
    softmax_row(&mut pst);
    let pt = teacher_soft(teacher_probs, tau);
    (0..student_logits.len())
        .map(|k| {
            let onehot = if k == y { 1.0 } else { 0.0 };
            alpha * (ps[k] - onehot) + (1.0 - alpha) * tau * (pst[k] - pt[k])
        })
        .collect()
}

/// Records the batch-mean distillation loss on a graph.
///
/// `student_log_probs` is the student's `log f` (used directly for the
/// cross-entropy and as the student logits for the KL term);
/// `teacher_probs` are simplex rows. Returns `(total, ce, kd)` with
/// `total = α·ce + (1 − α)·kd` and `kd` already scaled by `τ²`.
pub fn kd_term(
    g: &mut Graph,
    student_log_probs: NodeId,
    teacher_probs: &Tensor,
    labels: &[usize],
    alpha: f64,
    tau: f64,
) -> Result<(NodeId, NodeId, NodeId)> {
    let shape = g.value(student_log_probs).shape().to_vec();
    if shape != teacher_probs.shape() || shape[0] != labels.len() {
        return Err(Error::shape(
            "kd_loss",
            format!(
                "student {:?}, teacher {:?}, {} labels",
                shape,
                teacher_probs.shape(),
                labels.len()
            ),
        ));
    }
    let (n, k) = (shape[0], shape[1]);
    let inv_n = 1.0 / n as f64;

    let mut onehot = Tensor::zeros(vec![n, k]);
    for (i, &y) in labels.iter().enumerate() {
        onehot.data_mut()[i * k + y] = 1.0;
    }
    let oh = g.input(onehot);
    let picked = g.mul(student_log_probs, oh)?;
    let s = g.sum(picked)?;
    let ce = g.scale(s, -inv_n)?;

    let mut pt = Vec::with_capacity(n * k);
    let mut entropy_term = 0.0;
    for i in 0..n {
        let row = teacher_soft(teacher_probs.row(i), tau);
        entropy_term += row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        pt.extend(row);
    }
    let pt = g.input(Tensor::new(vec![n, k], pt)?);
    let scaled = g.scale(student_log_probs, 1.0 / tau)?;
    let lps = g.log_softmax(scaled)?;
    let cross = g.mul(pt, lps)?;
    let cross = g.sum(cross)?;
    // τ² · (Σ p log p − Σ p log q) / n
    let neg = g.scale(cross, -tau * tau * inv_n)?;
    let c = g.input(Tensor::scalar(tau * tau * inv_n * entropy_term));
    let kd = g.add(neg, c)?;

    let a = g.scale(ce, alpha)?;
    let b = g.scale(kd, 1.0 - alpha)?;
    let total = g.add(a, b)?;
    Ok((total, ce, kd))
}
