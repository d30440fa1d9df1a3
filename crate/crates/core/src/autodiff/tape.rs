//! Append-only tape of tensor operations with reverse accumulation.
//!
//! Every recorded operation stores its forward value. `backward` walks the
//! nodes once in reverse insertion order, skipping nodes that no parameter
//! or input leaf flows into.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::graph::DiffusionOperator;
use crate::scalar::Scalar;

/// Relative size below which an `abs`/`relu` input counts as zero in
/// [`Tape::branches`].
const BRANCH_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Input,
    Param(String),
    Softmax(NodeId),
    PermuteRows(NodeId, Vec<usize>),
    FilterWeights(NodeId),
    DiffusionStack {
        input: NodeId,
        op: Arc<DiffusionOperator<T>>,
    },
    StackCombine {
        weights: NodeId,
        stack: NodeId,
    },
    Select(NodeId, usize),
    Abs(NodeId),
    PowI(NodeId, i32),
    Relu(NodeId),
    SumAxis(NodeId, usize),
    Sum(NodeId),
    Gather {
        sources: Vec<NodeId>,
        picks: Vec<(usize, usize)>,
    },
    Stack(Vec<NodeId>),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, T),
    DotConst(NodeId, Vec<T>),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    ScaleShift {
        x: NodeId,
        scale: Vec<T>,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Rbf {
        x: NodeId,
        anchors: NodeId,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: NodeId,
        targets: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    tracked: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f64> {
    pub by_param: BTreeMap<String, Tensor<T>>,
    /// Parameters the loss does not depend on; their gradient is zero.
    pub disconnected: Vec<String>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_param.get(name)
    }

    /// Adds `other` entrywise; a parameter stays flagged disconnected only if
    /// it is disconnected in both.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        if self.by_param.is_empty() {
            *self = other.clone();
            return;
        }
        for (k, g) in &other.by_param {
            match self.by_param.get_mut(k) {
                Some(mine) => mine.add_assign(g),
                None => {
                    self.by_param.insert(k.clone(), g.clone());
                }
            }
        }
        self.disconnected.retain(|k| other.disconnected.contains(k));
    }
}

/// Adjoint of every node after a reverse sweep.
#[derive(Debug, Clone)]
pub struct Adjoints<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Scalar> Adjoints<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// How many nodes ran their backward rule.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Which piece of the recorded function the current values fall in: the
    /// sign of every `abs`/`relu` input and every row permutation. Two points
    /// with equal patterns lie on the same smooth piece. Inputs within
    /// roundoff of zero relative to the largest entry of their node get a
    /// state of their own, so structurally vanishing entries do not flip
    /// sign with noise.
    pub fn branches(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Abs(x) | Op::Relu(x) => {
                    let data = self.value(*x).data();
                    let peak = data.iter().fold(T::zero(), |m, &a| m.max(a.abs()));
                    let negligible = peak * T::lit(BRANCH_NOISE);
                    out.extend(data.iter().map(|&a| match a {
                        a if a.abs() <= negligible => 2,
                        a if a > T::zero() => 1,
                        _ => 0,
                    }));
                }
                Op::PermuteRows(_, order) => out.extend(order.iter().map(|&r| r as u32)),
                _ => {}
            }
        }
        out
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, tracked: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    // Leaves

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    /// Leaf whose adjoint can be read back from [`Tape::backward_seeded`].
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(Op::Input, value, true)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> NodeId {
        self.push(Op::Param(name.into()), value, true)
    }

    // Selection and filter construction

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.shape().len(), 2, "softmax_rows expects a matrix");
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let mut out = Vec::with_capacity(v.len());
        for r in 0..rows {
            let row = v.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&a| (a - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            out.extend(exps.into_iter().map(|e| e / total));
        }
        let tracked = self.tracked(&[x]);
        self.push(Op::Softmax(x), Tensor::matrix(rows, cols, out), tracked)
    }

    /// Output row `r` is input row `order[r]`.
    pub fn permute_rows(&mut self, x: NodeId, order: Vec<usize>) -> NodeId {
        let v = self.value(x);
        assert_eq!(order.len(), v.rows());
        let mut data = Vec::with_capacity(v.len());
        for &r in &order {
            data.extend_from_slice(v.row(r));
        }
        let value = Tensor::new(v.shape().to_vec(), data);
        let tracked = self.tracked(&[x]);
        self.push(Op::PermuteRows(x, order), value, tracked)
    }

    /// Maps a `J × m` selection matrix to the `(J+1) × (m+1)` coefficients of
    /// each relaxed filter over diffusion steps `0..=m`.
    pub fn filter_weights(&mut self, f: NodeId) -> NodeId {
        let value = filter_weights_forward(self.value(f));
        let tracked = self.tracked(&[f]);
        self.push(Op::FilterWeights(f), value, tracked)
    }

    /// `[u, P u, …, P^m u]` for a node-major `n × C` input.
    pub fn diffusion_stack(&mut self, u: NodeId, op: Arc<DiffusionOperator<T>>, steps: usize) -> NodeId {
        let value = diffusion_stack_forward(self.value(u), &op, steps);
        let tracked = self.tracked(&[u]);
        self.push(Op::DiffusionStack { input: u, op }, value, tracked)
    }

    /// `out[k] = Σ_t weights[k, t] · stack[t]`.
    pub fn stack_combine(&mut self, weights: NodeId, stack: NodeId) -> NodeId {
        let value = stack_combine_forward(self.value(weights), self.value(stack));
        let tracked = self.tracked(&[weights, stack]);
        self.push(Op::StackCombine { weights, stack }, value, tracked)
    }

    /// Slice `index` along the first axis.
    pub fn select(&mut self, x: NodeId, index: usize) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(v.shape()[1..].to_vec(), v.row(index).to_vec());
        let tracked = self.tracked(&[x]);
        self.push(Op::Select(x, index), value, tracked)
    }

    // Elementwise

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Abs(x), |a| a.abs())
    }

    pub fn powi(&mut self, x: NodeId, q: i32) -> NodeId {
        self.map(x, Op::PowI(x, q), |a| a.powi(q))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.map(x, Op::Relu(x), |a| a.max(T::zero()))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        self.map(x, Op::Scale(x, c), |a| a * c)
    }

    fn map(&mut self, x: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect());
        let tracked = self.tracked(&[x]);
        self.push(op, value, tracked)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    fn zip(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise operands differ in shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let tracked = self.tracked(&[a, b]);
        self.push(op, value, tracked)
    }

    // Reductions and assembly

    /// Sums out one axis.
    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> NodeId {
        let v = self.value(x);
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let tracked = self.tracked(&[x]);
        self.push(Op::SumAxis(x, axis), Tensor::new(shape, data), tracked)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().copied().sum();
        let tracked = self.tracked(&[x]);
        self.push(Op::Sum(x), Tensor::scalar(total), tracked)
    }

    pub fn dot_const(&mut self, x: NodeId, c: Vec<T>) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.len(), c.len());
        let total = v.data().iter().zip(&c).map(|(&a, &b)| a * b).sum();
        let tracked = self.tracked(&[x]);
        self.push(Op::DotConst(x, c), Tensor::scalar(total), tracked)
    }

    /// 1-D vector of `sources[s].flat[i]` for each pick `(s, i)`.
    pub fn gather(&mut self, sources: Vec<NodeId>, picks: Vec<(usize, usize)>) -> NodeId {
        let data = picks
            .iter()
            .map(|&(s, i)| self.value(sources[s]).data()[i])
            .collect();
        let tracked = self.tracked(&sources);
        self.push(Op::Gather { sources, picks }, Tensor::vector(data), tracked)
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: Vec<NodeId>) -> NodeId {
        assert!(!parts.is_empty());
        let inner = self.value(parts[0]).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(parts[0]).len());
        for &p in &parts {
            assert_eq!(self.value(p).shape(), inner.as_slice(), "stack parts differ in shape");
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let tracked = self.tracked(&parts);
        self.push(Op::Stack(parts), Tensor::new(shape, data), tracked)
    }

    // Layers

    /// `x w + b` with `x: B × in`, `w: in × out`, `b: out`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (rows, din) = (vx.shape()[0], vx.shape()[1]);
        let dout = vw.shape()[1];
        assert_eq!(vw.shape()[0], din, "affine weight rows must equal input width");
        assert_eq!(vb.len(), dout);
        let mut out = vec![T::zero(); rows * dout];
        for r in 0..rows {
            let orow = &mut out[r * dout..(r + 1) * dout];
            orow.copy_from_slice(vb.data());
            for (i, &xi) in vx.row(r).iter().enumerate() {
                if xi == T::zero() {
                    continue;
                }
                for (o, &wij) in orow.iter_mut().zip(vw.row(i)) {
                    *o += xi * wij;
                }
            }
        }
        let tracked = self.tracked(&[x, w, b]);
        self.push(Op::Affine { x, w, b }, Tensor::matrix(rows, dout, out), tracked)
    }

    /// Columnwise `(x − shift) · scale` with constant vectors.
    pub fn scale_shift(&mut self, x: NodeId, shift: &[T], scale: Vec<T>) -> NodeId {
        let v = self.value(x);
        let cols = v.row_len();
        assert_eq!(shift.len(), cols);
        assert_eq!(scale.len(), cols);
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(k, &a)| (a - shift[k % cols]) * scale[k % cols])
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data);
        let tracked = self.tracked(&[x]);
        self.push(Op::ScaleShift { x, scale }, value, tracked)
    }

    /// Training-mode batch normalization with biased batch variance.
    /// Returns the output node and the batch mean and variance.
    pub fn batch_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: T) -> (NodeId, Vec<T>, Vec<T>) {
        let v = self.value(x);
        let (rows, cols) = (v.shape()[0], v.shape()[1]);
        let nb = T::from_usize_lossy(rows);
        let mut mean = vec![T::zero(); cols];
        let mut var = vec![T::zero(); cols];
        for r in 0..rows {
            for (m, &a) in mean.iter_mut().zip(v.row(r)) {
                *m += a / nb;
            }
        }
        for r in 0..rows {
            for ((s, &a), &m) in var.iter_mut().zip(v.row(r)).zip(&mean) {
                *s += (a - m) * (a - m) / nb;
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(rows * cols);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (c, &a) in v.row(r).iter().enumerate() {
                let h = (a - mean[c]) * inv_std[c];
                xhat.push(h);
                out.push(g[c] * h + b[c]);
            }
        }
        let tracked = self.tracked(&[x, gamma, beta]);
        let id = self.push(
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Tensor::matrix(rows, cols, out),
            tracked,
        );
        (id, mean, var)
    }

    /// `exp(−‖x_b − c_k‖²)` for rows `x_b` and anchors `c_k`.
    pub fn rbf(&mut self, x: NodeId, anchors: NodeId) -> NodeId {
        let (vx, vc) = (self.value(x), self.value(anchors));
        let (rows, k) = (vx.shape()[0], vc.shape()[0]);
        assert_eq!(vx.row_len(), vc.row_len(), "anchors and inputs differ in width");
        let mut out = Vec::with_capacity(rows * k);
        for b in 0..rows {
            for a in 0..k {
                let d2: T = vx
                    .row(b)
                    .iter()
                    .zip(vc.row(a))
                    .map(|(&p, &q)| (p - q) * (p - q))
                    .sum();
                out.push((-d2).exp());
            }
        }
        let tracked = self.tracked(&[x, anchors]);
        self.push(Op::Rbf { x, anchors }, Tensor::matrix(rows, k, out), tracked)
    }

    // Losses

    /// Mean softmax cross-entropy of `B × K` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        let v = self.value(logits);
        let (rows, k) = (v.shape()[0], v.shape()[1]);
        assert_eq!(labels.len(), rows);
        let mut probs = Vec::with_capacity(rows * k);
        let mut loss = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = v.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&a| (a - max).exp()).sum::<T>().ln();
            loss += lse - row[y];
            probs.extend(row.iter().map(|&a| (a - lse).exp()));
        }
        let value = Tensor::scalar(loss / T::from_usize_lossy(rows));
        let tracked = self.tracked(&[logits]);
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            value,
            tracked,
        )
    }

    /// Mean squared error against constant targets.
    pub fn mse(&mut self, pred: NodeId, targets: Vec<T>) -> NodeId {
        let v = self.value(pred);
        assert_eq!(v.len(), targets.len());
        let loss = v
            .data()
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / T::from_usize_lossy(targets.len());
        let tracked = self.tracked(&[pred]);
        self.push(Op::Mse { pred, targets }, Tensor::scalar(loss), tracked)
    }

    // Reverse sweep

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let v = self.value(loss);
        if !v.is_scalar() {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let adj = self.backward_seeded(loss, Tensor::new(v.shape().to_vec(), vec![T::one()]));
        Ok(self.collect_params(&adj))
    }

    /// Parameter gradients from an adjoint sweep.
    pub fn collect_params(&self, adj: &Adjoints<T>) -> Gradients<T> {
        let mut by_param = BTreeMap::new();
        let mut disconnected = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = match &adj.grads[i] {
                    Some(g) => g.clone(),
                    None => {
                        disconnected.push(name.clone());
                        Tensor::zeros(node.value.shape().to_vec())
                    }
                };
                match by_param.get_mut(name) {
                    Some(acc) => Tensor::add_assign(acc, &g),
                    None => {
                        by_param.insert(name.clone(), g);
                    }
                }
            }
        }
        Gradients {
            by_param,
            disconnected,
        }
    }

    /// Vector-Jacobian product of node `out` against `seed`.
    pub fn backward_seeded(&self, out: NodeId, seed: Tensor<T>) -> Adjoints<T> {
        assert_eq!(seed.shape(), self.value(out).shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        let mut visited = 0;
        for i in (0..=out.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited += 1;
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Adjoints { grads, visited }
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut send = |id: NodeId, delta: Tensor<T>| {
            if !self.nodes[id.0].tracked {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |id: NodeId| Tensor::zeros(self.value(id).shape().to_vec());
        match &node.op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Softmax(x) => {
                let cols = out.shape()[1];
                let mut d = like(*x);
                for r in 0..out.shape()[0] {
                    let (y, gr) = (out.row(r), g.row(r));
                    let inner: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        d.data_mut()[r * cols + c] = y[c] * (gr[c] - inner);
                    }
                }
                send(*x, d);
            }
            Op::PermuteRows(x, order) => {
                let w = out.row_len();
                let mut d = like(*x);
                for (r, &src) in order.iter().enumerate() {
                    d.data_mut()[src * w..(src + 1) * w].copy_from_slice(g.row(r));
                }
                send(*x, d);
            }
            Op::FilterWeights(f) => send(*f, filter_weights_backward(g, self.value(*f).shape())),
            Op::DiffusionStack { input, op } => {
                let u = self.value(*input);
                let (n, ch) = (u.shape()[0], u.row_len());
                let steps = out.shape()[0] - 1;
                let mut acc = g.row(steps).to_vec();
                let mut tmp = vec![T::zero(); n * ch];
                for t in (0..steps).rev() {
                    op.apply_transpose_into(&acc, ch, &mut tmp);
                    for (a, (&p, &gt)) in acc.iter_mut().zip(tmp.iter().zip(g.row(t))) {
                        *a = p + gt;
                    }
                }
                send(*input, Tensor::new(u.shape().to_vec(), acc));
            }
            Op::StackCombine { weights, stack } => {
                let (w, s) = (self.value(*weights), self.value(*stack));
                let (k, depth) = (w.shape()[0], w.shape()[1]);
                if self.nodes[weights.0].tracked {
                    let mut d = like(*weights);
                    for a in 0..k {
                        for t in 0..depth {
                            d.data_mut()[a * depth + t] =
                                g.row(a).iter().zip(s.row(t)).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    send(*weights, d);
                }
                if self.nodes[stack.0].tracked {
                    let mut d = like(*stack);
                    let len = s.row_len();
                    for t in 0..depth {
                        let dst = &mut d.data_mut()[t * len..(t + 1) * len];
                        for a in 0..k {
                            let c = w.data()[a * depth + t];
                            for (o, &gv) in dst.iter_mut().zip(g.row(a)) {
                                *o += c * gv;
                            }
                        }
                    }
                    send(*stack, d);
                }
            }
            Op::Select(x, index) => {
                let mut d = like(*x);
                let w = g.len();
                d.data_mut()[index * w..(index + 1) * w].copy_from_slice(g.data());
                send(*x, d);
            }
            Op::Abs(x) => send(*x, self.elementwise(*x, g, |a| sign(a))),
            Op::PowI(x, q) => {
                let q = *q;
                let qf = T::lit(q as f64);
                send(*x, self.elementwise(*x, g, |a| qf * a.powi(q - 1)));
            }
            Op::Relu(x) => send(
                *x,
                self.elementwise(*x, g, |a| if a > T::zero() { T::one() } else { T::zero() }),
            ),
            Op::Scale(x, c) => {
                let c = *c;
                send(*x, self.elementwise(*x, g, |_| c));
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                let mut neg = g.clone();
                neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                send(*b, neg);
            }
            Op::SumAxis(x, axis) => {
                let shape = self.value(*x).shape();
                let (outer, len, inner) = split_axis(shape, *axis);
                let mut d = like(*x);
                for o in 0..outer {
                    for l in 0..len {
                        d.data_mut()[(o * len + l) * inner..(o * len + l + 1) * inner]
                            .copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                send(*x, d);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                let len = self.value(*x).len();
                send(*x, Tensor::new(shape, vec![g.item(); len]));
            }
            Op::DotConst(x, c) => {
                let shape = self.value(*x).shape().to_vec();
                send(*x, Tensor::new(shape, c.iter().map(|&v| v * g.item()).collect()));
            }
            Op::Gather { sources, picks } => {
                let mut parts: Vec<Option<Tensor<T>>> = vec![None; sources.len()];
                for (&(s, idx), &gv) in picks.iter().zip(g.data()) {
                    let part = parts[s].get_or_insert_with(|| like(sources[s]));
                    part.data_mut()[idx] += gv;
                }
                for (s, part) in parts.into_iter().enumerate() {
                    if let Some(p) = part {
                        send(sources[s], p);
                    }
                }
            }
            Op::Stack(parts) => {
                let w = g.row_len();
                for (r, &p) in parts.iter().enumerate() {
                    let shape = self.value(p).shape().to_vec();
                    send(p, Tensor::new(shape, g.data()[r * w..(r + 1) * w].to_vec()));
                }
            }
            Op::Affine { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (rows, din) = (vx.shape()[0], vx.shape()[1]);
                let dout = vw.shape()[1];
                if self.nodes[x.0].tracked {
                    let mut d = like(*x);
                    for r in 0..rows {
                        for i in 0..din {
                            d.data_mut()[r * din + i] =
                                vw.row(i).iter().zip(g.row(r)).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    send(*x, d);
                }
                if self.nodes[w.0].tracked {
                    let mut d = like(*w);
                    for r in 0..rows {
                        for (i, &xi) in vx.row(r).iter().enumerate() {
                            if xi == T::zero() {
                                continue;
                            }
                            for (o, &gv) in d.data_mut()[i * dout..(i + 1) * dout].iter_mut().zip(g.row(r)) {
                                *o += xi * gv;
                            }
                        }
                    }
                    send(*w, d);
                }
                if self.nodes[b.0].tracked {
                    let mut d = like(*b);
                    for r in 0..rows {
                        for (o, &gv) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    send(*b, d);
                }
            }
            Op::ScaleShift { x, scale } => {
                let cols = scale.len();
                let shape = self.value(*x).shape().to_vec();
                let data = g.data().iter().enumerate().map(|(k, &gv)| gv * scale[k % cols]).collect();
                send(*x, Tensor::new(shape, data));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = (out.shape()[0], out.shape()[1]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); cols];
                let mut dbeta = vec![T::zero(); cols];
                let mut sum_gh = vec![T::zero(); cols];
                let mut sum_gh_xhat = vec![T::zero(); cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let k = r * cols + c;
                        let gv = g.data()[k];
                        dgamma[c] += gv * xhat[k];
                        dbeta[c] += gv;
                        let gh = gv * gam[c];
                        sum_gh[c] += gh;
                        sum_gh_xhat[c] += gh * xhat[k];
                    }
                }
                if self.nodes[x.0].tracked {
                    let nb = T::from_usize_lossy(rows);
                    let mut d = like(*x);
                    for r in 0..rows {
                        for c in 0..cols {
                            let k = r * cols + c;
                            let gh = g.data()[k] * gam[c];
                            d.data_mut()[k] =
                                inv_std[c] / nb * (nb * gh - sum_gh[c] - xhat[k] * sum_gh_xhat[c]);
                        }
                    }
                    send(*x, d);
                }
                send(*gamma, Tensor::vector(dgamma));
                send(*beta, Tensor::vector(dbeta));
            }
            Op::Rbf { x, anchors } => {
                let (vx, vc) = (self.value(*x), self.value(*anchors));
                let (rows, k, dim) = (vx.shape()[0], vc.shape()[0], vx.row_len());
                let mut dx = like(*x);
                let mut dc = like(*anchors);
                let two = T::lit(2.0);
                for b in 0..rows {
                    for a in 0..k {
                        let coef = g.data()[b * k + a] * out.data()[b * k + a] * two;
                        if coef == T::zero() {
                            continue;
                        }
                        for i in 0..dim {
                            let diff = vx.data()[b * dim + i] - vc.data()[a * dim + i];
                            dx.data_mut()[b * dim + i] -= coef * diff;
                            dc.data_mut()[a * dim + i] += coef * diff;
                        }
                    }
                }
                send(*x, dx);
                send(*anchors, dc);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let shape = self.value(*logits).shape().to_vec();
                let k = shape[1];
                let scale = g.item() / T::from_usize_lossy(labels.len());
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * k + y] -= T::one();
                }
                d.iter_mut().for_each(|v| *v *= scale);
                send(*logits, Tensor::new(shape, d));
            }
            Op::Mse { pred, targets } => {
                let v = self.value(*pred);
                let scale = T::lit(2.0) * g.item() / T::from_usize_lossy(targets.len());
                let d = v.data().iter().zip(targets).map(|(&p, &t)| scale * (p - t)).collect();
                send(*pred, Tensor::new(v.shape().to_vec(), d));
            }
        }
    }

    fn elementwise(&self, x: NodeId, g: &Tensor<T>, deriv: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(x);
        let data = v.data().iter().zip(g.data()).map(|(&a, &gv)| gv * deriv(a)).collect();
        Tensor::new(v.shape().to_vec(), data)
    }
}

/// Subgradient of `|·|` with `sign(0) = 0`.
fn sign<T: Scalar>(a: T) -> T {
    if a > T::zero() {
        T::one()
    } else if a < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn filter_weights_forward<T: Scalar>(f: &Tensor<T>) -> Tensor<T> {
    let (j, m) = (f.shape()[0], f.shape()[1]);
    let w = m + 1;
    let mut g = vec![T::zero(); (j + 1) * w];
    g[0] = T::one();
    for t in 0..m {
        g[t + 1] = -f.data()[t];
        for k in 1..j {
            g[k * w + t + 1] = f.data()[(k - 1) * m + t] - f.data()[k * m + t];
        }
        g[j * w + t + 1] = f.data()[(j - 1) * m + t];
    }
    Tensor::matrix(j + 1, w, g)
}

fn filter_weights_backward<T: Scalar>(g: &Tensor<T>, f_shape: &[usize]) -> Tensor<T> {
    let (j, m) = (f_shape[0], f_shape[1]);
    let w = m + 1;
    let mut d = vec![T::zero(); j * m];
    for t in 0..m {
        d[t] -= g.data()[t + 1];
        for k in 1..j {
            let gv = g.data()[k * w + t + 1];
            d[(k - 1) * m + t] += gv;
            d[k * m + t] -= gv;
        }
        d[(j - 1) * m + t] += g.data()[j * w + t + 1];
    }
    Tensor::matrix(j, m, d)
}

pub(crate) fn diffusion_stack_forward<T: Scalar>(
    u: &Tensor<T>,
    op: &DiffusionOperator<T>,
    steps: usize,
) -> Tensor<T> {
    let n = u.shape()[0];
    assert_eq!(n, op.n(), "signal and operator sizes differ");
    let ch = u.row_len();
    let len = n * ch;
    let mut data = vec![T::zero(); (steps + 1) * len];
    data[..len].copy_from_slice(u.data());
    for t in 1..=steps {
        let (prev, next) = data.split_at_mut(t * len);
        op.apply_into(&prev[(t - 1) * len..], ch, &mut next[..len]);
    }
    let mut shape = vec![steps + 1];
    shape.extend_from_slice(u.shape());
    Tensor::new(shape, data)
}

pub(crate) fn stack_combine_forward<T: Scalar>(w: &Tensor<T>, s: &Tensor<T>) -> Tensor<T> {
    let (k, depth) = (w.shape()[0], w.shape()[1]);
    assert_eq!(depth, s.shape()[0], "weights and stack depth differ");
    let len = s.row_len();
    let mut out = vec![T::zero(); k * len];
    for a in 0..k {
        let dst = &mut out[a * len..(a + 1) * len];
        for t in 0..depth {
            let c = w.data()[a * depth + t];
            if c == T::zero() {
                continue;
            }
            for (o, &v) in dst.iter_mut().zip(s.row(t)) {
                *o += c * v;
            }
        }
    }
    let mut shape = vec![k];
    shape.extend_from_slice(&s.shape()[1..]);
    Tensor::new(shape, out)
}
