//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are evaluated eagerly as they are recorded. [`Graph::backward`]
//! then walks the tape in reverse, accumulating vector-Jacobian products
//! for every node that depends on a parameter.

use super::{gemm, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Square(NodeId),
    Abs(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    SumCols(NodeId),
    Max(NodeId),
    GroupMean(NodeId, usize),
    Reshape(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Per-parameter gradients, indexed like the parameter list given to the graph.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn with_len(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub fn get(&self, idx: usize) -> Option<&Tensor> {
        self.grads.get(idx).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn set(&mut self, idx: usize, t: Tensor) {
        if idx >= self.grads.len() {
            self.grads.resize(idx + 1, None);
        }
        self.grads[idx] = Some(t);
    }

    /// Adds `t` into the slot, creating it if empty.
    pub fn accumulate(&mut self, idx: usize, t: &Tensor) -> Result<()> {
        if idx >= self.grads.len() {
            self.grads.resize(idx + 1, None);
        }
        match &mut self.grads[idx] {
            Some(g) => {
                if g.shape() != t.shape() {
                    return Err(Error::shape(
                        "accumulate",
                        format!("{:?} vs {:?}", g.shape(), t.shape()),
                    ));
                }
                g.data_mut()
                    .iter_mut()
                    .zip(t.data())
                    .for_each(|(a, b)| *a += b);
            }
            slot @ None => *slot = Some(t.clone()),
        }
        Ok(())
    }

    pub fn into_vec(self) -> Vec<Option<Tensor>> {
        self.grads
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn two_d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        [c] => Ok((1, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, tracked: bool) -> Result<NodeId> {
        check_finite(op, value.data())?;
        self.nodes.push(Node {
            value,
            op: kind,
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            tracked: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf whose gradient is reported under `index`.
    pub fn param(&mut self, index: usize, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            value: t,
            op: Op::Param(index),
            tracked: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = two_d("matmul", self.value(a))?;
        let (k2, n) = two_d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{m}x{k} times {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("matmul", Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), tracked)
    }

    /// `a · bᵀ`, with `b` stored as `n x k`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = two_d("matmul_t", self.value(a))?;
        let (n, k2) = two_d("matmul_t", self.value(b))?;
        if k != k2 {
            return Err(Error::shape(
                "matmul_t",
                format!("{m}x{k} times transpose of {n}x{k2}"),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, 0.0, &mut out);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("matmul_t", Tensor::from_raw(vec![m, n], out), Op::MatMulT(a, b), tracked)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("add", t, Op::Add(a, b), tracked)
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = two_d("add_row", self.value(a))?;
        if self.value(b).numel() != n {
            return Err(Error::shape(
                "add_row",
                format!("bias of {} entries for rows of {n}", self.value(b).numel()),
            ));
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)).take(m) {
            row.iter_mut().zip(bias).for_each(|(x, y)| *x += y);
        }
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("add_row", t, Op::AddRow(a, b), tracked)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("mul", t, Op::Mul(a, b), tracked)
    }

    /// `a - b`, composed from scale and add.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    fn map(&mut self, op: &'static str, a: NodeId, kind: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let v = self.value(a);
        let t = Tensor::from_raw(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect());
        let tracked = self.tracked(a);
        self.push(op, t, kind, tracked)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map("scale", a, Op::Scale(a, c), |x| c * x)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("log", a, Op::Log(a), f64::ln)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("exp", a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("square", a, Op::Square(a), |x| x * x)
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.map("abs", a, Op::Abs(a), f64::abs)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = two_d("softmax", self.value(a))?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)).take(m) {
            softmax_in_place(row);
        }
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let tracked = self.tracked(a);
        self.push("softmax", t, Op::Softmax(a), tracked)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = two_d("log_softmax", self.value(a))?;
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)).take(m) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let t = Tensor::from_raw(self.value(a).shape().to_vec(), data);
        let tracked = self.tracked(a);
        self.push("log_softmax", t, Op::LogSoftmax(a), tracked)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let tracked = self.tracked(a);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), tracked)
    }

    /// `m x n -> m`, summing each row.
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = two_d("sum_rows", self.value(a))?;
        let data: Vec<f64> = if n == 0 {
            vec![0.0; m]
        } else {
            self.value(a).data().chunks(n).map(|r| r.iter().sum()).collect()
        };
        let tracked = self.tracked(a);
        self.push("sum_rows", Tensor::from_raw(vec![m], data), Op::SumRows(a), tracked)
    }

    /// `m x n -> n`, summing each column.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        let (_, n) = two_d("sum_cols", self.value(a))?;
        let mut data = vec![0.0; n];
        for row in self.value(a).data().chunks(n.max(1)) {
            data.iter_mut().zip(row).for_each(|(s, x)| *s += x);
        }
        let tracked = self.tracked(a);
        self.push("sum_cols", Tensor::from_raw(vec![n], data), Op::SumCols(a), tracked)
    }

    /// Maximum over all entries; the subgradient goes to the lowest-index maximizer.
    pub fn max(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(Error::shape("max", "empty tensor"));
        }
        let (_, best) = argmax_first(v.data());
        let tracked = self.tracked(a);
        self.push("max", Tensor::scalar(best), Op::Max(a), tracked)
    }

    /// Averages consecutive groups of `group` rows: `(m*group) x n -> m x n`.
    pub fn group_mean(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let (rows, n) = two_d("group_mean", self.value(a))?;
        if group == 0 || rows % group != 0 {
            return Err(Error::shape(
                "group_mean",
                format!("{rows} rows not divisible into groups of {group}"),
            ));
        }
        let m = rows / group;
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        let inv = 1.0 / group as f64;
        for (r, row) in src.chunks(n.max(1)).enumerate().take(rows) {
            let dst = &mut data[(r / group) * n..(r / group + 1) * n];
            dst.iter_mut().zip(row).for_each(|(d, x)| *d += x * inv);
        }
        let tracked = self.tracked(a);
        self.push("group_mean", Tensor::from_raw(vec![m, n], data), Op::GroupMean(a, group), tracked)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = self.value(a).clone().reshape(shape)?;
        let tracked = self.tracked(a);
        self.push("reshape", t, Op::Reshape(a), tracked)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let y = node.value.data();
            match node.op {
                Op::Input => {}
                Op::Param(p) => {
                    out.accumulate(p, &Tensor::from_raw(node.value.shape().to_vec(), dy))?;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = two_d("matmul", self.value(a))?;
                    let (_, n) = two_d("matmul", self.value(b))?;
                    if self.tracked(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &dy, false, self.value(b).data(), true, 0.0, &mut da);
                        acc(&mut grads, a, da);
                    }
                    if self.tracked(b) {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, self.value(a).data(), true, &dy, false, 0.0, &mut db);
                        acc(&mut grads, b, db);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = two_d("matmul_t", self.value(a))?;
                    let (n, _) = two_d("matmul_t", self.value(b))?;
                    if self.tracked(a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, &dy, false, self.value(b).data(), false, 0.0, &mut da);
                        acc(&mut grads, a, da);
                    }
                    if self.tracked(b) {
                        let mut db = vec![0.0; n * k];
                        gemm(n, m, k, &dy, true, self.value(a).data(), false, 0.0, &mut db);
                        acc(&mut grads, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(a) {
                        acc(&mut grads, a, dy.clone());
                    }
                    if self.tracked(b) {
                        acc(&mut grads, b, dy);
                    }
                }
                Op::AddRow(a, b) => {
                    let n = self.value(b).numel();
                    if self.tracked(b) {
                        let mut db = vec![0.0; n];
                        for row in dy.chunks(n.max(1)) {
                            db.iter_mut().zip(row).for_each(|(s, x)| *s += x);
                        }
                        acc(&mut grads, b, db);
                    }
                    if self.tracked(a) {
                        acc(&mut grads, a, dy);
                    }
                }
                Op::Mul(a, b) => {
                    if self.tracked(a) {
                        let d = zip_map(&dy, self.value(b).data(), |g, x| g * x);
                        acc(&mut grads, a, d);
                    }
                    if self.tracked(b) {
                        let d = zip_map(&dy, self.value(a).data(), |g, x| g * x);
                        acc(&mut grads, b, d);
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, a, dy.iter().map(|g| g * c).collect()),
                Op::Relu(a) => {
                    let d = zip_map(&dy, self.value(a).data(), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, a, d);
                }
                Op::Log(a) => {
                    let d = zip_map(&dy, self.value(a).data(), |g, x| g / x);
                    check_finite("log (backward)", &d)?;
                    acc(&mut grads, a, d);
                }
                Op::Exp(a) => acc(&mut grads, a, zip_map(&dy, y, |g, v| g * v)),
                Op::Square(a) => {
                    acc(&mut grads, a, zip_map(&dy, self.value(a).data(), |g, x| 2.0 * g * x))
                }
                Op::Abs(a) => {
                    let d = zip_map(&dy, self.value(a).data(), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, a, d);
                }
                Op::Softmax(a) => {
                    let (_, n) = two_d("softmax", &node.value)?;
                    let mut d = vec![0.0; dy.len()];
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, v)| g * v).sum();
                        for ((o, g), v) in dr.iter_mut().zip(gr).zip(yr) {
                            *o = v * (g - dot);
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::LogSoftmax(a) => {
                    let (_, n) = two_d("log_softmax", &node.value)?;
                    let mut d = vec![0.0; dy.len()];
                    for ((dr, gr), yr) in d.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                        let total: f64 = gr.iter().sum();
                        for ((o, g), v) in dr.iter_mut().zip(gr).zip(yr) {
                            *o = g - v.exp() * total;
                        }
                    }
                    acc(&mut grads, a, d);
                }
                Op::Sum(a) => {
                    let n = self.value(a).numel();
                    acc(&mut grads, a, vec![dy[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(a).numel();
                    acc(&mut grads, a, vec![dy[0] / n as f64; n]);
                }
                Op::SumRows(a) => {
                    let (_, n) = two_d("sum_rows", self.value(a))?;
                    let d = dy.iter().flat_map(|&g| std::iter::repeat(g).take(n)).collect();
                    acc(&mut grads, a, d);
                }
                Op::SumCols(a) => {
                    let (m, _) = two_d("sum_cols", self.value(a))?;
                    let mut d = Vec::with_capacity(m * dy.len());
                    for _ in 0..m {
                        d.extend_from_slice(&dy);
                    }
                    acc(&mut grads, a, d);
                }
                Op::Max(a) => {
                    let src = self.value(a).data();
                    let (i, _) = argmax_first(src);
                    let mut d = vec![0.0; src.len()];
                    d[i] = dy[0];
                    acc(&mut grads, a, d);
                }
                Op::GroupMean(a, group) => {
                    let (rows, n) = two_d("group_mean", self.value(a))?;
                    let inv = 1.0 / group as f64;
                    let mut d = vec![0.0; rows * n];
                    for (r, dr) in d.chunks_mut(n.max(1)).enumerate().take(rows) {
                        let g = &dy[(r / group) * n..(r / group + 1) * n];
                        dr.iter_mut().zip(g).for_each(|(o, x)| *o = x * inv);
                    }
                    acc(&mut grads, a, d);
                }
                Op::Reshape(a) => acc(&mut grads, a, dy),
            }
        }
        Ok(out)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: NodeId, d: Vec<f64>) {
    match &mut grads[id.0] {
        Some(g) => g.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(d),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Index and value of the first maximal entry.
pub(crate) fn argmax_first(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// Runs `build` on a fresh graph holding `params` as leaves and returns the
/// scalar loss together with one gradient per parameter.
pub fn forward_backward<F>(params: &[Parameter], build: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(i, p.tensor.clone()))
        .collect();
    let loss = build(&mut g, &ids)?;
    let value = g.value(loss).item();
    let grads = g.backward(loss)?;
    let out = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            grads
                .get(i)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.tensor.shape().to_vec()))
        })
        .collect();
    Ok((value, out))
}
