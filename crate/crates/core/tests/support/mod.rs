//! Finite-difference gradient checking shared by the gradient and
//! acceptance suites.

#![allow(dead_code)]

use kdlab::netlib::{lipschitz_term, Architecture, Head, Network};
use kdlab::regularize::consistency_term;
use kdlab::rng::{Rng, SeedStream};
use kdlab::tensor::{forward_backward, Graph, NodeId, Tensor};
use kdlab::trainlab::kd_term;
use kdlab::Result;
use rand::Rng as _;

pub const EPS: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
    Lipschitz,
    Kd,
    /// Cross-entropy plus weighted Lipschitz and consistency terms.
    Teacher,
}

pub const LOSSES: [LossKind; 5] = [
    LossKind::CrossEntropy,
    LossKind::Mse,
    LossKind::Lipschitz,
    LossKind::Kd,
    LossKind::Teacher,
];

/// A random network, batch and loss.
pub struct Case {
    pub net: Network,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub target: Tensor,
    pub kind: LossKind,
    pub alpha: f64,
    pub tau: f64,
}

pub fn random_case(seed: u64, kind: LossKind) -> Case {
    let mut rng = SeedStream::new(seed).stream("gradcheck");
    let patches = rng.gen_range(1..=3);
    let patch_dim = rng.gen_range(1..=4);
    let classes = rng.gen_range(2..=4);
    let hidden: Vec<usize> = (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(1..=5)).collect();
    let arch = match rng.gen_range(0..3) {
        0 => Architecture::mlp(patches, patch_dim, hidden, classes),
        k => {
            let mut a = Architecture::patchwise(patches, patch_dim, hidden, rng.gen_range(1..=4), classes);
            if k == 2 {
                a.head = Head::StandardSoftmax;
            }
            a
        }
    };
    let mut net = Network::new(arch, &mut rng).unwrap();
    for p in &mut net.params {
        for v in p.tensor.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let n = rng.gen_range(1..=5);
    let w = net.arch.input_width();
    let x = Tensor::matrix(n, w, (0..n * w).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let labels = (0..n).map(|_| rng.gen_range(0..classes)).collect();
    let target = random_simplex(&mut rng, n, classes);
    Case {
        net,
        x,
        labels,
        target,
        kind,
        alpha: rng.gen_range(0.0..1.0),
        tau: rng.gen_range(1.0..5.0),
    }
}

fn random_simplex(rng: &mut Rng, n: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    Tensor::matrix(n, k, data).unwrap()
}

fn build(case: &Case, net: &Network, g: &mut Graph, ids: &[NodeId]) -> Result<NodeId> {
    let x = g.input(case.x.clone());
    let lp = net.log_probs(g, ids, x)?;
    let n = case.labels.len();
    let k = net.arch.classes;
    let ce = |g: &mut Graph| -> Result<NodeId> {
        let mut onehot = vec![0.0; n * k];
        for (i, &y) in case.labels.iter().enumerate() {
            onehot[i * k + y] = 1.0;
        }
        let oh = g.input(Tensor::matrix(n, k, onehot)?);
        let picked = g.mul(lp, oh)?;
        let s = g.sum(picked)?;
        g.scale(s, -1.0 / n as f64)
    };
    match case.kind {
        LossKind::CrossEntropy => ce(g),
        LossKind::Mse => {
            let p = g.exp(lp)?;
            let t = g.input(case.target.clone());
            let d = g.sub(p, t)?;
            let sq = g.square(d)?;
            g.mean(sq)
        }
        LossKind::Lipschitz => lipschitz_term(net, g, ids),
        LossKind::Kd => Ok(kd_term(g, lp, &case.target, &case.labels, case.alpha, case.tau)?.0),
        LossKind::Teacher => {
            let c = ce(g)?;
            let lip = lipschitz_term(net, g, ids)?;
            let lip = g.scale(lip, 0.01)?;
            let probs = g.softmax(lp)?;
            let cr = consistency_term(g, probs, case.target.clone())?;
            let cr = g.scale(cr, case.alpha)?;
            let s = g.add(c, lip)?;
            g.add(s, cr)
        }
    }
}

pub fn loss_and_grads(case: &Case, net: &Network) -> (f64, Vec<Tensor>) {
    forward_backward(&net.params, |g, ids| build(case, net, g, ids)).unwrap()
}

/// Whether every weight's maximal absolute column sum beats the runner-up
/// by a margin and has no entry near zero, so the subgradient is a gradient
/// within the finite-difference step.
pub fn lipschitz_untied(net: &Network) -> bool {
    net.layers.iter().all(|layer| {
        let w = &net.params[layer.weight].tensor;
        let (rows, cols) = (w.rows(), w.cols());
        let mut sums: Vec<(f64, usize)> = (0..cols)
            .map(|c| ((0..rows).map(|r| w.get(r, c).abs()).sum(), c))
            .collect();
        sums.sort_by(|a, b| b.0.total_cmp(&a.0));
        let gap_ok = sums.len() < 2 || sums[0].0 - sums[1].0 > 1e-3;
        let col = sums[0].1;
        gap_ok && (0..rows).all(|r| w.get(r, col).abs() > 1e-3)
    })
}

/// Whether the case avoids the nondifferentiable points of its loss.
pub fn admissible(case: &Case) -> bool {
    match case.kind {
        LossKind::Lipschitz | LossKind::Teacher => lipschitz_untied(&case.net),
        _ => true,
    }
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every parameter entry.
pub fn max_relative_error(case: &Case) -> f64 {
    let (_, grads) = loss_and_grads(case, &case.net);
    let mut worst: f64 = 0.0;
    let mut net = case.net.clone();
    for (pi, g) in grads.iter().enumerate() {
        for j in 0..g.numel() {
            let orig = net.params[pi].tensor.data()[j];
            net.params[pi].tensor.data_mut()[j] = orig + EPS;
            let up = loss_and_grads(case, &net).0;
            net.params[pi].tensor.data_mut()[j] = orig - EPS;
            let down = loss_and_grads(case, &net).0;
            net.params[pi].tensor.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let analytic = g.data()[j];
            let denom = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    worst
}
