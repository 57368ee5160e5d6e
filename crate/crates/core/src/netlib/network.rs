//! Dense feed-forward networks with a standard or modified softmax head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, Parameter, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkKind {
    /// Flattened input through an MLP.
    GenericMlp,
    /// A shared extractor applied to every patch, then a bias-free 1x1
    /// classifier producing per-patch logits.
    Patchwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Softmax of the logits; for patchwise networks, of the patch-averaged logits.
    StandardSoftmax,
    /// Elementwise geometric mean of the per-patch softmax vectors.
    ModifiedSoftmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub kind: NetworkKind,
    pub head: Head,
    pub patches: usize,
    pub patch_dim: usize,
    pub hidden: Vec<usize>,
    /// Width of the per-patch feature map (patchwise only).
    #[serde(default)]
    pub feature_dim: usize,
    pub classes: usize,
}

impl Architecture {
    pub fn mlp(patches: usize, patch_dim: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            kind: NetworkKind::GenericMlp,
            head: Head::StandardSoftmax,
            patches,
            patch_dim,
            hidden,
            feature_dim: 0,
            classes,
        }
    }

    pub fn patchwise(
        patches: usize,
        patch_dim: usize,
        hidden: Vec<usize>,
        feature_dim: usize,
        classes: usize,
    ) -> Self {
        Self {
            kind: NetworkKind::Patchwise,
            head: Head::ModifiedSoftmax,
            patches,
            patch_dim,
            hidden,
            feature_dim,
            classes,
        }
    }

    pub fn input_width(&self) -> usize {
        self.patches * self.patch_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.patches == 0 || self.patch_dim == 0 || self.classes == 0 {
            return Err(Error::invalid("patches, patch_dim and classes must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden widths must be positive"));
        }
        if self.kind == NetworkKind::Patchwise && self.feature_dim == 0 {
            return Err(Error::invalid("patchwise networks need feature_dim > 0"));
        }
        if self.kind == NetworkKind::GenericMlp && self.head == Head::ModifiedSoftmax {
            return Err(Error::invalid("the modified softmax head needs a patchwise network"));
        }
        Ok(())
    }

    /// `(name, out, in, has_bias)` for every dense component in forward order.
    fn layer_plan(&self) -> Vec<(String, usize, usize, bool)> {
        let mut plan = Vec::new();
        match self.kind {
            NetworkKind::GenericMlp => {
                let mut fan_in = self.input_width();
                for (i, &h) in self.hidden.iter().enumerate() {
                    plan.push((format!("fc{i}"), h, fan_in, true));
                    fan_in = h;
                }
                plan.push(("out".to_string(), self.classes, fan_in, true));
            }
            NetworkKind::Patchwise => {
                let mut fan_in = self.patch_dim;
                for (i, &h) in self.hidden.iter().enumerate() {
                    plan.push((format!("extractor{i}"), h, fan_in, true));
                    fan_in = h;
                }
                plan.push(("feature".to_string(), self.feature_dim, fan_in, true));
                plan.push(("classifier".to_string(), self.classes, self.feature_dim, false));
            }
        }
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub name: String,
    pub weight: usize,
    pub bias: Option<usize>,
}

/// A network plus its trainable parameters.
///
/// Weights are stored `out x in` and map a column vector `u` to `W u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<Parameter>,
    pub layers: Vec<DenseLayer>,
}

/// Probabilities and log-probabilities for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `n x K` head output; rows of a modified-softmax head may sum below 1.
    pub probs: Tensor,
    /// `n x K` log of `probs`, usable as logits.
    pub log_probs: Tensor,
}

impl Prediction {
    /// Rows renormalized onto the simplex.
    pub fn normalized(&self) -> Tensor {
        let mut t = self.probs.clone();
        let k = t.cols();
        for row in t.data_mut().chunks_mut(k) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        t
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        Self::build(arch, |fan_out, fan_in| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_out * fan_in).map(|_| rng.gen_range(-limit..=limit)).collect()
        })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        Self::build(arch, |o, i| vec![0.0; o * i])
    }

    fn build(arch: Architecture, mut init: impl FnMut(usize, usize) -> Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::new();
        let mut layers = Vec::new();
        for (name, out, inp, has_bias) in arch.layer_plan() {
            let weight = params.len();
            params.push(Parameter::new(
                format!("{name}.weight"),
                Tensor::from_raw(vec![out, inp], init(out, inp)),
            ));
            let bias = has_bias.then(|| {
                params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![out])));
                params.len() - 1
            });
            layers.push(DenseLayer { name, weight, bias });
        }
        Ok(Self { arch, params, layers })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Weight tensors of every dense component, in forward order.
    pub fn weights(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layers
            .iter()
            .map(|l| (l.name.as_str(), &self.params[l.weight].tensor))
    }

    fn dense(&self, g: &mut Graph, ids: &[NodeId], layer: &DenseLayer, x: NodeId) -> Result<NodeId> {
        let h = g.matmul_t(x, ids[layer.weight])?;
        match layer.bias {
            Some(b) => g.add_row(h, ids[b]),
            None => Ok(h),
        }
    }

    /// Records `log f(x)` for a batch `x` of shape `n x (M*b)`. For the
    /// modified softmax head this is the unnormalized log output.
    pub fn log_probs(&self, g: &mut Graph, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        let shape = g.value(x).shape().to_vec();
        let n = match shape.as_slice() {
            [n, w] if *w == self.arch.input_width() => *n,
            s => {
                return Err(Error::shape(
                    "predict",
                    format!("input {s:?}, network expects n x {}", self.arch.input_width()),
                ))
            }
        };
        let last = self.layers.len() - 1;
        match self.arch.kind {
            NetworkKind::GenericMlp => {
                let mut h = x;
                for (i, layer) in self.layers.iter().enumerate() {
                    h = self.dense(g, ids, layer, h)?;
                    if i < last {
                        h = g.relu(h)?;
                    }
                }
                g.log_softmax(h)
            }
            NetworkKind::Patchwise => {
                let m = self.arch.patches;
                let mut h = g.reshape(x, vec![n * m, self.arch.patch_dim])?;
                // extractor layers, feature layer, then the classifier
                for (i, layer) in self.layers.iter().enumerate() {
                    h = self.dense(g, ids, layer, h)?;
                    if i + 2 < self.layers.len() {
                        h = g.relu(h)?;
                    }
                }
                match self.arch.head {
                    Head::ModifiedSoftmax => {
                        let per_patch = g.log_softmax(h)?;
                        g.group_mean(per_patch, m)
                    }
                    Head::StandardSoftmax => {
                        let pooled = g.group_mean(h, m)?;
                        g.log_softmax(pooled)
                    }
                }
            }
        }
    }

    /// Parameters as untracked graph inputs, for inference.
    pub fn constant_ids(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|p| g.input(p.tensor.clone())).collect()
    }

    pub fn tracked_ids(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, p.tensor.clone()))
            .collect()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let ids = self.constant_ids(&mut g);
        let xin = g.input(x.clone());
        let lp = self.log_probs(&mut g, &ids, xin)?;
        let log_probs = g.value(lp).clone();
        let probs = Tensor::from_raw(
            log_probs.shape().to_vec(),
            log_probs.data().iter().map(|v| v.exp()).collect(),
        );
        Ok(Prediction { probs, log_probs })
    }

    /// Predictions over many rows, evaluated in chunks of `chunk` rows.
    pub fn predict_rows(&self, inputs: &[f64], rows: usize, chunk: usize) -> Result<Prediction> {
        let w = self.arch.input_width();
        let k = self.arch.classes;
        let mut probs = Vec::with_capacity(rows * k);
        let mut logs = Vec::with_capacity(rows * k);
        let mut start = 0;
        while start < rows {
            let end = (start + chunk.max(1)).min(rows);
            let x = Tensor::new(vec![end - start, w], inputs[start * w..end * w].to_vec())?;
            let p = self.predict(&x)?;
            probs.extend_from_slice(p.probs.data());
            logs.extend_from_slice(p.log_probs.data());
            start = end;
        }
        Ok(Prediction {
            probs: Tensor::from_raw(vec![rows, k], probs),
            log_probs: Tensor::from_raw(vec![rows, k], logs),
        })
    }
}

/// `exp((1/M) Σ_m ĥ_m) / (Π_m Σ_k exp ĥ_{m,k})^{1/M}` for an `M x K` logit
/// matrix, evaluated in log space.
pub fn modified_softmax(logits: &Tensor) -> Result<Vec<f64>> {
    let (m, k) = match logits.shape() {
        [m, k] => (*m, *k),
        s => return Err(Error::shape("modified_softmax", format!("expected M x K, got {s:?}"))),
    };
    if m == 0 {
        return Err(Error::shape("modified_softmax", "no patches"));
    }
    let mut acc = vec![0.0; k];
    for r in 0..m {
        let row = logits.row(r);
        let lse = crate::tensor::log_sum_exp(row);
        acc.iter_mut().zip(row).for_each(|(a, h)| *a += (h - lse) / m as f64);
    }
    Ok(acc.into_iter().map(f64::exp).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn modified_softmax_examples() {
        let one = modified_softmax(&Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(one, vec![0.5, 0.5]);
        let ln2 = 2f64.ln();
        let two = modified_softmax(&Tensor::matrix(2, 2, vec![ln2, 0.0, 0.0, ln2]).unwrap()).unwrap();
        let expect = 2f64.sqrt() / 3.0;
        assert!((two[0] - expect).abs() < 1e-15 && (two[1] - expect).abs() < 1e-15);
        assert!(two.iter().sum::<f64>() < 1.0);
    }

    #[test]
    fn zero_network_is_uniform() {
        for arch in [
            Architecture::mlp(2, 3, vec![4], 5),
            Architecture::patchwise(2, 3, vec![4], 3, 5),
        ] {
            let net = Network::zeros(arch).unwrap();
            let p = net.predict(&Tensor::matrix(3, 6, vec![0.7; 18]).unwrap()).unwrap();
            assert!(p.probs.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Network::zeros(Architecture::mlp(2, 3, vec![4], 5)).unwrap();
        assert!(net.predict(&Tensor::zeros(vec![1, 5])).is_err());
    }

    #[test]
    fn invalid_architectures() {
        let mut a = Architecture::mlp(1, 2, vec![3], 2);
        a.head = Head::ModifiedSoftmax;
        assert!(a.validate().is_err());
        assert!(Architecture::patchwise(1, 2, vec![], 0, 2).validate().is_err());
    }

    #[test]
    fn patchwise_is_patch_order_invariant() {
        let arch = Architecture::patchwise(3, 2, vec![5], 4, 3);
        let net = Network::new(arch, &mut SeedStream::new(2).stream("init")).unwrap();
        let x = vec![0.1, -0.3, 0.5, 0.9, -0.7, 0.2];
        let swapped = vec![-0.7, 0.2, 0.1, -0.3, 0.5, 0.9];
        let a = net.predict(&Tensor::matrix(1, 6, x).unwrap()).unwrap();
        let b = net.predict(&Tensor::matrix(1, 6, swapped).unwrap()).unwrap();
        for (p, q) in a.probs.data().iter().zip(b.probs.data()) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        let net = Network::new(
            Architecture::patchwise(2, 2, vec![3, 3], 4, 2),
            &mut SeedStream::new(0).stream("init"),
        )
        .unwrap();
        let mut names: Vec<_> = net.params.iter().map(|p| p.name.clone()).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert_eq!(net.layers.last().unwrap().bias, None);
    }
}
