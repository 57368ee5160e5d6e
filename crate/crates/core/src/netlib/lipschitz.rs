//! Lipschitz constants of dense components under the 1-norm.

use serde::{Deserialize, Serialize};

use super::Network;
use crate::error::Result;
use crate::tensor::{Gradients, Graph, NodeId, Tensor};

/// Operator norm induced by `‖·‖₁`: the maximum absolute column sum.
pub fn lipschitz_bound(w: &Tensor) -> f64 {
    max_column(w).2
}

/// `(rows, maximizing column, its absolute sum)`; ties go to the lowest column.
fn max_column(w: &Tensor) -> (usize, usize, f64) {
    let cols = w.cols();
    let rows = if cols == 0 { 0 } else { w.numel() / cols };
    let mut sums = vec![0.0; cols];
    for r in 0..rows {
        for (s, v) in sums.iter_mut().zip(w.row(r)) {
            *s += v.abs();
        }
    }
    let mut best = (0, 0.0);
    for (j, &s) in sums.iter().enumerate() {
        if s > best.1 {
            best = (j, s);
        }
    }
    (rows, best.0, best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBound {
    pub name: String,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub per_component: Vec<ComponentBound>,
    pub total: f64,
}

impl LipschitzReport {
    /// Product of the per-component bounds: a Lipschitz constant of the
    /// whole composition, since ReLU is 1-Lipschitz.
    pub fn product(&self) -> f64 {
        self.per_component.iter().map(|c| c.bound).product()
    }
}

pub fn lipschitz_report(net: &Network) -> LipschitzReport {
    let per_component: Vec<ComponentBound> = net
        .weights()
        .map(|(name, w)| ComponentBound {
            name: name.to_string(),
            bound: lipschitz_bound(w),
        })
        .collect();
    let total = per_component.iter().map(|c| c.bound).sum();
    LipschitzReport {
        per_component,
        total,
    }
}

/// Sum of the component bounds and its subgradient: `sign(W[i, j*])` on
/// the maximizing column `j*` of each weight, zero elsewhere and on biases.
pub fn lipschitz_penalty(net: &Network) -> (f64, Gradients) {
    let mut grads = Gradients::with_len(net.params.len());
    for (i, p) in net.params.iter().enumerate() {
        grads.set(i, Tensor::zeros(p.tensor.shape().to_vec()));
    }
    let mut total = 0.0;
    for layer in &net.layers {
        let w = &net.params[layer.weight].tensor;
        let (rows, col, s) = max_column(w);
        total += s;
        let cols = w.cols();
        let mut g = Tensor::zeros(w.shape().to_vec());
        for r in 0..rows {
            let v = w.get(r, col);
            g.data_mut()[r * cols + col] = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
        grads.set(layer.weight, g);
    }
    (total, grads)
}

/// Records the penalty on a graph so it differentiates with the rest of a loss.
pub fn lipschitz_term(net: &Network, g: &mut Graph, ids: &[NodeId]) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for layer in &net.layers {
        let a = g.abs(ids[layer.weight])?;
        let cols = g.sum_cols(a)?;
        let m = g.max(cols)?;
        total = Some(match total {
            Some(t) => g.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("networks have at least one layer"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlib::Architecture;
    use crate::rng::SeedStream;
    use crate::tensor::forward_backward;
    use rand::Rng as _;

    #[test]
    fn bound_examples() {
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lipschitz_bound(&eye), 1.0);
        let w = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        assert_eq!(lipschitz_bound(&w), 6.0);
        assert_eq!(lipschitz_bound(&Tensor::zeros(vec![2, 3])), 0.0);
    }

    fn single_layer(w: Vec<f64>, out: usize, inp: usize) -> Network {
        // a patchwise net with no hidden layers has a feature layer and a classifier;
        // use an MLP without hidden layers for a single component
        let mut net = Network::zeros(Architecture::mlp(1, inp, vec![], out)).unwrap();
        net.params[0].tensor = Tensor::matrix(out, inp, w).unwrap();
        net
    }

    #[test]
    fn penalty_subgradient_on_max_column() {
        let net = single_layer(vec![1.0, -2.0, 3.0, 4.0], 2, 2);
        let (v, g) = lipschitz_penalty(&net);
        assert_eq!(v, 6.0);
        assert_eq!(g.get(0).unwrap().data(), &[0.0, -1.0, 0.0, 1.0]);
        assert_eq!(g.get(1).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn penalty_is_additive_and_homogeneous() {
        let mut net = Network::zeros(Architecture::mlp(1, 2, vec![2], 2)).unwrap();
        net.params[0].tensor = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        net.params[2].tensor = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lipschitz_penalty(&net).0, 2.0);
        let base = Network::new(Architecture::mlp(2, 3, vec![5], 4), &mut SeedStream::new(1).stream("i")).unwrap();
        let mut scaled = base.clone();
        for l in &scaled.layers.clone() {
            scaled.params[l.weight].tensor.data_mut().iter_mut().for_each(|w| *w *= 2.5);
        }
        let (a, b) = (lipschitz_penalty(&base).0, lipschitz_penalty(&scaled).0);
        assert!((b - 2.5 * a).abs() < 1e-12);
    }

    #[test]
    fn graph_term_matches_closed_form() {
        let net = Network::new(
            Architecture::patchwise(2, 3, vec![4], 3, 2),
            &mut SeedStream::new(8).stream("init"),
        )
        .unwrap();
        let (v, closed) = lipschitz_penalty(&net);
        let (gv, auto) = forward_backward(&net.params, |g, ids| lipschitz_term(&net, g, ids)).unwrap();
        assert!((v - gv).abs() < 1e-12);
        for (i, t) in auto.iter().enumerate() {
            assert_eq!(t.data(), closed.get(i).unwrap().data());
        }
    }

    #[test]
    fn bound_dominates_random_directions() {
        let mut rng = SeedStream::new(4).stream("w");
        for _ in 0..20 {
            let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..6));
            let w = Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let bound = lipschitz_bound(&w);
            for _ in 0..1000 {
                let u: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let wu: f64 = (0..r)
                    .map(|i| w.row(i).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().abs())
                    .sum();
                let nu: f64 = u.iter().map(|x| x.abs()).sum();
                assert!(wu <= bound * nu + 1e-12);
            }
        }
    }
}
