//! Accuracy, calibration (ECE, NLL, temperature scaling), student-teacher
//! fidelity, and distance to the true label distribution.

use serde::{Deserialize, Serialize};

use crate::datagen::MixedFeatureDataset;
use crate::error::{Error, Result};
use crate::netlib::Network;
use crate::tensor::{argmax_first, softmax_row, Tensor};

pub const DEFAULT_BINS: usize = 15;
const NLL_EPS: f64 = 1e-12;

/// Lowest index among the maximal entries.
pub fn argmax(row: &[f64]) -> usize {
    argmax_first(row).0
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean top-label confidence; 0 for empty bins.
    pub confidence: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Equal-width confidence bins on `(0, 1]`.
pub fn reliability_bins(probs: &Tensor, labels: &[usize], bins: usize) -> Vec<ReliabilityBin> {
    let bins = bins.max(1);
    let mut conf = vec![0.0; bins];
    let mut hits = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        let (pred, c) = argmax_first(row);
        let b = ((c * bins as f64).ceil() as usize).clamp(1, bins) - 1;
        conf[b] += c;
        count[b] += 1;
        if pred == y {
            hits[b] += 1;
        }
    }
    (0..bins)
        .map(|b| {
            let n = count[b];
            ReliabilityBin {
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                confidence: if n > 0 { conf[b] / n as f64 } else { 0.0 },
                accuracy: if n > 0 { hits[b] as f64 / n as f64 } else { 0.0 },
                count: n,
            }
        })
        .collect()
}

/// Top-label expected calibration error `Σ_b (n_b/N) |acc_b − conf_b|`.
pub fn ece(probs: &Tensor, labels: &[usize], bins: usize) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n = labels.len() as f64;
    reliability_bins(probs, labels, bins)
        .iter()
        .map(|b| b.count as f64 / n * (b.accuracy - b.confidence).abs())
        .sum()
}

/// Mean of `−ln(p_y + 1e-12)`.
pub fn nll(probs: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -(probs.get(i, y) + NLL_EPS).ln())
        .sum::<f64>()
        / labels.len() as f64
}

/// Row-wise `softmax(logits / temperature)`.
pub fn softmax_scaled(logits: &Tensor, temperature: f64) -> Tensor {
    let k = logits.cols();
    let mut data: Vec<f64> = logits.data().iter().map(|z| z / temperature).collect();
    for row in data.chunks_mut(k.max(1)) {
        softmax_row(row);
    }
    Tensor::from_raw(logits.shape().to_vec(), data)
}

pub fn nll_at_temperature(logits: &Tensor, labels: &[usize], temperature: f64) -> f64 {
    nll(&softmax_scaled(logits, temperature), labels)
}

pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 10.0);
pub const TEMPERATURE_TOL: f64 = 1e-4;

/// Temperature minimizing holdout NLL, by golden-section search on `log T`
/// over `[log 0.05, log 10]`. Returns 1 when the objective is flat (every
/// row of logits constant).
pub fn fit_temperature(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("temperature holdout is empty"));
    }
    let flat = (0..labels.len()).all(|i| {
        let row = logits.row(i);
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        hi - lo < 1e-12
    });
    if flat {
        return Ok(1.0);
    }
    let f = |log_t: f64| nll_at_temperature(logits, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (TEMPERATURE_RANGE.0.ln(), TEMPERATURE_RANGE.1.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > TEMPERATURE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Ok(((a + b) / 2.0).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece_raw: f64,
    pub nll_raw: f64,
    pub fitted_temperature: f64,
    pub ece_scaled: f64,
    pub nll_scaled: f64,
    pub bin_count: usize,
    pub bins: Vec<ReliabilityBin>,
}

/// Calibration of `eval_logits`, before and after a temperature fitted on a
/// separate holdout.
pub fn calibration_report(
    eval_logits: &Tensor,
    eval_labels: &[usize],
    holdout_logits: &Tensor,
    holdout_labels: &[usize],
    bins: usize,
) -> Result<CalibrationReport> {
    let raw = softmax_scaled(eval_logits, 1.0);
    let t = fit_temperature(holdout_logits, holdout_labels)?;
    let scaled = softmax_scaled(eval_logits, t);
    Ok(CalibrationReport {
        ece_raw: ece(&raw, eval_labels, bins),
        nll_raw: nll(&raw, eval_labels),
        fitted_temperature: t,
        ece_scaled: ece(&scaled, eval_labels, bins),
        nll_scaled: nll(&scaled, eval_labels),
        bin_count: bins,
        bins: reliability_bins(&raw, eval_labels, bins),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Percentage of examples whose top-1 labels agree.
    pub top1_agreement: f64,
    pub n_examples: usize,
}

pub fn fidelity(student: &Tensor, teacher: &Tensor) -> Result<FidelityReport> {
    if student.shape() != teacher.shape() {
        return Err(Error::shape(
            "fidelity",
            format!("{:?} vs {:?}", student.shape(), teacher.shape()),
        ));
    }
    let n = student.rows();
    if n == 0 {
        return Ok(FidelityReport {
            top1_agreement: 100.0,
            n_examples: 0,
        });
    }
    let agree = (0..n)
        .filter(|&i| argmax(student.row(i)) == argmax(teacher.row(i)))
        .count();
    Ok(FidelityReport {
        top1_agreement: 100.0 * agree as f64 / n as f64,
        n_examples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PNorm {
    #[default]
    L1,
    L2,
    Linf,
}

impl PNorm {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            PNorm::L1 => diffs.sum(),
            PNorm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            PNorm::Linf => diffs.fold(0.0, f64::max),
        }
    }
}

/// Mean distance between simplex-normalized predictions and the true label
/// distribution of each example.
pub fn distribution_error_of(probs: &Tensor, data: &MixedFeatureDataset, norm: PNorm) -> Result<f64> {
    if !data.has_ground_truth() {
        return Err(Error::NoGroundTruth);
    }
    if probs.rows() != data.len() || probs.cols() != data.classes {
        return Err(Error::shape(
            "distribution_error",
            format!("predictions {:?} for {} examples of {} classes", probs.shape(), data.len(), data.classes),
        ));
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut row = vec![0.0; data.classes];
    for i in 0..data.len() {
        row.copy_from_slice(probs.row(i));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= s);
        total += norm.distance(&row, data.true_distribution(i).expect("ground truth"));
    }
    Ok(total / data.len() as f64)
}

pub fn distribution_error(net: &Network, data: &MixedFeatureDataset, norm: PNorm) -> Result<f64> {
    if !data.has_ground_truth() {
        return Err(Error::NoGroundTruth);
    }
    let pred = net.predict_rows(&data.inputs, data.len(), 1024)?;
    distribution_error_of(&pred.probs, data, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(v: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn perfect_calibration() {
        let p = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(ece(&p, &[0, 1], 15), 0.0);
    }

    #[test]
    fn one_bin_gap() {
        let p = rows(&[&[0.8, 0.2], &[0.8, 0.2], &[0.8, 0.2], &[0.8, 0.2]]);
        let e = ece(&p, &[0, 0, 1, 1], 1);
        assert!((e - 0.3).abs() < 1e-15, "{e}");
        let table = reliability_bins(&p, &[0, 0, 1, 1], 15);
        assert_eq!(table.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn nll_closed_forms() {
        let p = rows(&[&[0.25; 4], &[0.25; 4]]);
        assert!((nll(&p, &[0, 3]) - 4f64.ln()).abs() < 1e-9);
        let one_hot = rows(&[&[0.0, 1.0]]);
        assert_eq!(nll(&one_hot, &[1]), -(1.0f64 + 1e-12).ln());
    }

    #[test]
    fn flat_logits_give_unit_temperature() {
        let z = rows(&[&[0.3, 0.3, 0.3], &[-1.0, -1.0, -1.0]]);
        assert_eq!(fit_temperature(&z, &[0, 2]).unwrap(), 1.0);
        assert!(fit_temperature(&z, &[]).is_err());
    }

    #[test]
    fn fidelity_cases() {
        let t = rows(&[&[0.9, 0.1], &[0.6, 0.4]]);
        let s = rows(&[&[0.2, 0.8], &[0.3, 0.7]]);
        assert_eq!(fidelity(&t, &t).unwrap().top1_agreement, 100.0);
        assert_eq!(fidelity(&s, &t).unwrap().top1_agreement, 0.0);
        // ties resolve to the lowest index on both sides
        let tie = rows(&[&[0.5, 0.5], &[0.5, 0.5]]);
        assert_eq!(fidelity(&tie, &t).unwrap().top1_agreement, 100.0);
        assert_eq!(fidelity(&t, &tie).unwrap(), fidelity(&tie, &t).unwrap());
    }

    #[test]
    fn norms() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 0.5, 0.5];
        assert_eq!(PNorm::L1.distance(&a, &b), 2.0);
        assert!((PNorm::L2.distance(&a, &b) - 1.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(PNorm::Linf.distance(&a, &b), 1.0);
    }
}
