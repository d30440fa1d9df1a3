//! Output heads and losses.
//!
//! Both heads consume standardized feature rows (`B × D`) on a tape. The FCN
//! head is `affine → relu → affine`; the RBF head batch-normalizes its input,
//! measures squared distances to `K` anchors drawn from the data, maps them
//! through `exp(−d²)` and finishes with an affine layer.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_ANCHORS: usize = 32;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Fcn,
    Rbf,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Fcn => "fcn",
            HeadKind::Rbf => "rbf",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn" => Ok(HeadKind::Fcn),
            "rbf" => Ok(HeadKind::Rbf),
            other => Err(Error::InvalidConfig(format!("unknown head `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Regress,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "regress" => Ok(Task::Regress),
            other => Err(Error::InvalidConfig(format!("unknown task `{other}`"))),
        }
    }
}

/// Per-sample supervision.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T = f64> {
    Classes { labels: Vec<usize>, count: usize },
    Values(Vec<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes { .. } => Task::Classify,
            Targets::Values(_) => Task::Regress,
        }
    }

    /// Output width a head needs for these targets.
    pub fn output_width(&self) -> usize {
        match self {
            Targets::Classes { count, .. } => *count,
            Targets::Values(_) => 1,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes { labels, count } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                count: *count,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Glorot-uniform `rows × cols` matrix.
fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::lit(rng.random_range(-a..a))).collect();
    Tensor::matrix(rows, cols, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnHead<T = f64> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> FcnHead<T> {
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::InvalidConfig("head widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            w1: glorot(input, hidden, &mut rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: glorot(hidden, output, &mut rng),
            b2: Tensor::zeros(vec![output]),
        })
    }

    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.w2.shape()[1]
    }
}

/// Feature-wise batch normalization with running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T = f64> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Scalar> BatchNorm<T> {
    /// Identity affine terms, running statistics taken from `rows`.
    pub fn from_rows(rows: &[Vec<T>], eps: T, momentum: T) -> Result<Self> {
        let (mean, var) = column_moments(rows)?;
        let d = mean.len();
        Ok(Self {
            gamma: Tensor::vector(vec![T::one(); d]),
            beta: Tensor::zeros(vec![d]),
            running_mean: mean,
            running_var: var,
            eps,
            momentum,
        })
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    pub fn absorb(&mut self, mean: &[T], var: &[T]) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }

    /// Eval-mode normalization of one row.
    pub fn normalize(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .enumerate()
            .map(|(c, &a)| {
                let h = (a - self.running_mean[c]) / (self.running_var[c] + self.eps).sqrt();
                self.gamma.data()[c] * h + self.beta.data()[c]
            })
            .collect()
    }
}

/// Columnwise mean and biased variance.
fn column_moments<T: Scalar>(rows: &[Vec<T>]) -> Result<(Vec<T>, Vec<T>)> {
    let first = rows.first().ok_or(Error::NotEnoughSamples { needed: 1, available: 0 })?;
    let d = first.len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("feature rows differ in width".into()));
    }
    let nb = T::from_usize_lossy(rows.len());
    let mut mean = vec![T::zero(); d];
    for r in rows {
        for (m, &a) in mean.iter_mut().zip(r) {
            *m += a / nb;
        }
    }
    let mut var = vec![T::zero(); d];
    for r in rows {
        for ((v, &a), &m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (a - m) * (a - m) / nb;
        }
    }
    Ok((mean, var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfHead<T = f64> {
    pub bn: BatchNorm<T>,
    pub anchors: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> RbfHead<T> {
    pub fn num_anchors(&self) -> usize {
        self.anchors.rows()
    }

    pub fn input_width(&self) -> usize {
        self.bn.width()
    }

    pub fn output_width(&self) -> usize {
        self.w.shape()[1]
    }

    /// Whether every anchor coordinate lies inside the per-coordinate range
    /// of `rows` after eval-mode normalization.
    pub fn anchors_in_range(&self, rows: &[Vec<T>]) -> bool {
        let normalized: Vec<Vec<T>> = rows.iter().map(|r| self.bn.normalize(r)).collect();
        anchors_within(&self.anchors, &normalized)
    }
}

fn anchors_within<T: Scalar>(anchors: &Tensor<T>, rows: &[Vec<T>]) -> bool {
    let d = anchors.row_len();
    (0..d).all(|c| {
        let lo = rows.iter().map(|r| r[c]).fold(T::infinity(), T::min);
        let hi = rows.iter().map(|r| r[c]).fold(T::neg_infinity(), T::max);
        let slack = T::lit(1e-12) * (T::one() + lo.abs().max(hi.abs()));
        (0..anchors.rows()).all(|k| {
            let a = anchors.row(k)[c];
            a >= lo - slack && a <= hi + slack
        })
    })
}

/// Initializes an RBF head from first-pass feature rows.
///
/// Batchnorm statistics come from `rows`; anchors are `k` distinct rows of
/// the normalized batch chosen uniformly at random. The batchnorm scale
/// starts at `1/√d` so squared distances between normalized rows are of
/// order one rather than `d`.
pub fn init_rbf<T: Scalar>(rows: &[Vec<T>], k: usize, outputs: usize, seed: u64) -> Result<RbfHead<T>> {
    init_rbf_with(rows, k, outputs, seed, T::lit(BN_EPS), T::lit(BN_MOMENTUM))
}

pub fn init_rbf_with<T: Scalar>(
    rows: &[Vec<T>],
    k: usize,
    outputs: usize,
    seed: u64,
    eps: T,
    momentum: T,
) -> Result<RbfHead<T>> {
    if k == 0 || k > rows.len() {
        return Err(Error::NotEnoughSamples {
            needed: k.max(1),
            available: rows.len(),
        });
    }
    if outputs == 0 {
        return Err(Error::InvalidConfig("head output width must be positive".into()));
    }
    let mut bn = BatchNorm::from_rows(rows, eps, momentum)?;
    let d = bn.width();
    bn.gamma = Tensor::vector(vec![T::one() / T::from_usize_lossy(d).sqrt(); d]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(k * d);
    for i in sample(&mut rng, rows.len(), k).into_iter() {
        anchors.extend(bn.normalize(&rows[i]));
    }
    Ok(RbfHead {
        bn,
        anchors: Tensor::matrix(k, d, anchors),
        w: glorot(k, outputs, &mut rng),
        b: Tensor::zeros(vec![outputs]),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfOutput<T = f64> {
    /// `exp(−‖BatchNorm(x) − c_k‖²)` per anchor.
    pub activations: Vec<T>,
    pub output: Vec<T>,
}

/// Eval-mode forward pass for one feature row.
pub fn rbf_forward<T: Scalar>(head: &RbfHead<T>, x: &[T]) -> Result<RbfOutput<T>> {
    if x.len() != head.input_width() {
        return Err(Error::DimensionMismatch(format!(
            "row of width {}, head expects {}",
            x.len(),
            head.input_width()
        )));
    }
    let z = head.bn.normalize(x);
    let activations: Vec<T> = (0..head.num_anchors())
        .map(|k| {
            let d2: T = z.iter().zip(head.anchors.row(k)).map(|(&a, &c)| (a - c) * (a - c)).sum();
            (-d2).exp()
        })
        .collect();
    let outputs = head.output_width();
    let mut output = head.b.data().to_vec();
    for (k, &a) in activations.iter().enumerate() {
        for (o, &w) in output.iter_mut().zip(head.w.row(k)) {
            *o += a * w;
        }
    }
    debug_assert_eq!(output.len(), outputs);
    Ok(RbfOutput { activations, output })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head<T = f64> {
    Fcn(FcnHead<T>),
    Rbf(RbfHead<T>),
}

/// Output node of a recorded head and, in training mode, the batch statistics
/// the batchnorm layer saw.
#[derive(Debug, Clone)]
pub struct HeadRecord<T> {
    pub output: NodeId,
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Head<T> {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Fcn(_) => HeadKind::Fcn,
            Head::Rbf(_) => HeadKind::Rbf,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            Head::Fcn(h) => h.input_width(),
            Head::Rbf(h) => h.input_width(),
        }
    }

    /// Trainable tensors with their tape names.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Head::Fcn(h) => vec![("fcn.w1", &h.w1), ("fcn.b1", &h.b1), ("fcn.w2", &h.w2), ("fcn.b2", &h.b2)],
            Head::Rbf(h) => vec![
                ("rbf.gamma", &h.bn.gamma),
                ("rbf.beta", &h.bn.beta),
                ("rbf.anchors", &h.anchors),
                ("rbf.w", &h.w),
                ("rbf.b", &h.b),
            ],
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        match (self, name) {
            (Head::Fcn(h), "fcn.w1") => Some(&mut h.w1),
            (Head::Fcn(h), "fcn.b1") => Some(&mut h.b1),
            (Head::Fcn(h), "fcn.w2") => Some(&mut h.w2),
            (Head::Fcn(h), "fcn.b2") => Some(&mut h.b2),
            (Head::Rbf(h), "rbf.gamma") => Some(&mut h.bn.gamma),
            (Head::Rbf(h), "rbf.beta") => Some(&mut h.bn.beta),
            (Head::Rbf(h), "rbf.anchors") => Some(&mut h.anchors),
            (Head::Rbf(h), "rbf.w") => Some(&mut h.w),
            (Head::Rbf(h), "rbf.b") => Some(&mut h.b),
            _ => None,
        }
    }

    /// Records the head on `x` (`B × D`). `train` selects batch statistics
    /// over running statistics for the RBF batchnorm.
    pub fn record(&self, tape: &mut Tape<T>, x: NodeId, train: bool) -> HeadRecord<T> {
        let p: Vec<NodeId> = self
            .params()
            .into_iter()
            .map(|(name, t)| tape.param(name, t.clone()))
            .collect();
        match self {
            Head::Fcn(_) => {
                let h = tape.affine(x, p[0], p[1]);
                let h = tape.relu(h);
                HeadRecord {
                    output: tape.affine(h, p[2], p[3]),
                    batch_stats: None,
                }
            }
            Head::Rbf(head) => {
                let (z, stats) = if train {
                    let (z, mean, var) = tape.batch_norm(x, p[0], p[1], head.bn.eps);
                    (z, Some((mean, var)))
                } else {
                    let rows = tape.value(x).clone();
                    let d = rows.row_len();
                    let mut data = Vec::with_capacity(rows.len());
                    for r in 0..rows.rows() {
                        data.extend(head.bn.normalize(rows.row(r)));
                    }
                    (tape.constant(Tensor::matrix(rows.rows(), d, data)), None)
                };
                let phi = tape.rbf(z, p[2]);
                HeadRecord {
                    output: tape.affine(phi, p[3], p[4]),
                    batch_stats: stats,
                }
            }
        }
    }

    pub fn absorb_batch_stats(&mut self, mean: &[T], var: &[T]) {
        if let Head::Rbf(h) = self {
            h.bn.absorb(mean, var);
        }
    }

    /// Eval-mode outputs for `B × D` rows.
    pub fn predict(&self, rows: &Tensor<T>) -> Tensor<T> {
        let mut tape = Tape::new();
        let x = tape.constant(rows.clone());
        let rec = self.record(&mut tape, x, false);
        tape.value(rec.output).clone()
    }
}

/// Records the task loss on `pred` (`B × K` logits or `B × 1` predictions).
pub fn record_loss<T: Scalar>(tape: &mut Tape<T>, pred: NodeId, targets: &Targets<T>) -> Result<NodeId> {
    let shape = tape.shape(pred).to_vec();
    if shape.len() != 2 || shape[0] != targets.len() || shape[1] != targets.output_width() {
        return Err(Error::DimensionMismatch(format!(
            "predictions {:?} for {} targets of width {}",
            shape,
            targets.len(),
            targets.output_width()
        )));
    }
    if targets.is_empty() {
        return Err(Error::DimensionMismatch("empty batch".into()));
    }
    match targets {
        Targets::Classes { labels, count } => {
            if let Some(&bad) = labels.iter().find(|&&l| l >= *count) {
                return Err(Error::DimensionMismatch(format!("label {bad} outside {count} classes")));
            }
            Ok(tape.softmax_cross_entropy(pred, labels.clone()))
        }
        Targets::Values(v) => Ok(tape.mse(pred, v.clone())),
    }
}

/// Cross-entropy for classes, mean squared error for (whitened) values.
pub fn loss<T: Scalar>(predictions: &Tensor<T>, targets: &Targets<T>) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(predictions.clone());
    let l = record_loss(&mut tape, p, targets)?;
    Ok(tape.value(l).item())
}
