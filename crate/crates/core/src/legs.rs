//! Trainable scattering: softmax scale selection over a diffusion stack.
//!
//! Each row of the logit matrix `Θ` (`J × m`) is turned into a distribution
//! over diffusion steps `1..=m`. Rows are sorted by their leading step, and
//! the relaxed filters are
//!
//! ```text
//! Ψ̃_0 x = x − Σ_t F[1,t] Pᵗx
//! Ψ̃_j x = Σ_t (F[j,t] − F[j+1,t]) Pᵗx      1 ≤ j ≤ J−1
//! Φ̃_J x = Σ_t F[J,t] Pᵗx
//! ```
//!
//! With one-hot rows at `t_1 < … < t_J` these coincide with the adaptive bank
//! of [`crate::filterbank`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::autodiff::{
    diffusion_stack_forward, filter_weights_forward, stack_combine_forward, NodeId, Tape, Tensor,
};
use crate::error::{Error, Result};
use crate::graph::{DiffusionOperator, GraphSignal};
use crate::scalar::Scalar;
use crate::scattering::{FeatureKey, FeaturePath, FeatureVector, ScatterConfig};

pub const DEFAULT_MAX_STEP: usize = 16;
pub const DEFAULT_NUM_SCALES: usize = 5;
/// Logit placed on the dyadic steps for the frozen transform.
pub const FIXED_SHARPNESS: f64 = 500.0;
/// Logit placed on the dyadic steps when training starts.
pub const LEARN_INIT_SHARPNESS: f64 = 2.0;

/// Name of the selection logits on a tape.
pub const THETA: &str = "theta";

/// Trainable `J × m` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionParams<T = f64> {
    theta: Tensor<T>,
}

impl<T: Scalar> SelectionParams<T> {
    pub fn new(theta: Tensor<T>) -> Result<Self> {
        if theta.shape().len() != 2 {
            return Err(Error::DimensionMismatch("theta must be a J x m matrix".into()));
        }
        let (j, m) = (theta.shape()[0], theta.shape()[1]);
        if j == 0 || j > m {
            return Err(Error::InvalidConfig(format!("need 1 <= J <= m, got J={j}, m={m}")));
        }
        if !theta.all_finite() {
            return Err(Error::InvalidConfig("theta has non-finite entries".into()));
        }
        Ok(Self { theta })
    }

    pub fn zeros(j: usize, m: usize) -> Result<Self> {
        Self::new(Tensor::zeros(vec![j, m]))
    }

    /// Row `k` carries `sharpness` at step `2^k` and zero elsewhere.
    pub fn dyadic(j: usize, m: usize, sharpness: f64) -> Result<Self> {
        let top = 1usize.checked_shl(j.saturating_sub(1) as u32).unwrap_or(usize::MAX);
        if j == 0 || top > m {
            return Err(Error::Overflow {
                exponent: j.saturating_sub(1) as u32,
                max_step: m,
            });
        }
        let mut theta = Tensor::zeros(vec![j, m]);
        for k in 0..j {
            theta.data_mut()[k * m + (1 << k) - 1] = T::lit(sharpness);
        }
        Self::new(theta)
    }

    /// Frozen dyadic selection, one-hot to working precision.
    pub fn fixed(j: usize, m: usize) -> Result<Self> {
        Self::dyadic(j, m, FIXED_SHARPNESS)
    }

    pub fn learnable_init(j: usize, m: usize) -> Result<Self> {
        Self::dyadic(j, m, LEARN_INIT_SHARPNESS)
    }

    pub fn theta(&self) -> &Tensor<T> {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut Tensor<T> {
        &mut self.theta
    }

    pub fn num_scales(&self) -> usize {
        self.theta.shape()[0]
    }

    pub fn max_step(&self) -> usize {
        self.theta.shape()[1]
    }
}

/// Row-stochastic selection, rows sorted by leading step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix<T = f64> {
    f: Tensor<T>,
    row_order: Vec<usize>,
}

impl<T: Scalar> SelectionMatrix<T> {
    /// Sorted `J × m` matrix; column `t` is diffusion step `t + 1`.
    pub fn matrix(&self) -> &Tensor<T> {
        &self.f
    }

    /// `row_order[r]` is the original row placed at position `r`.
    pub fn row_order(&self) -> &[usize] {
        &self.row_order
    }

    /// 1-based diffusion step of every row's maximum.
    pub fn leading_steps(&self) -> Vec<usize> {
        (0..self.f.rows()).map(|r| argmax(self.f.row(r)) + 1).collect()
    }

    /// Total mass of row `r` on steps `lo..=hi` (1-based, inclusive).
    pub fn band_mass(&self, r: usize, lo: usize, hi: usize) -> T {
        self.f.row(r)[lo - 1..hi.min(self.f.row_len())].iter().copied().sum()
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stable order of rows by leading position, ties by original index.
pub fn leading_order<T: Scalar>(f: &Tensor<T>) -> Vec<usize> {
    let lead: Vec<usize> = (0..f.rows()).map(|r| argmax(f.row(r))).collect();
    let mut order: Vec<usize> = (0..f.rows()).collect();
    order.sort_by_key(|&r| lead[r]);
    order
}

pub fn selection_matrix<T: Scalar>(params: &SelectionParams<T>) -> SelectionMatrix<T> {
    let mut tape = Tape::new();
    let theta = tape.constant(params.theta.clone());
    let (f, order) = record_selection(&mut tape, theta);
    SelectionMatrix {
        f: tape.value(f).clone(),
        row_order: order,
    }
}

/// Records softmax and row sorting. The permutation is recorded as a constant.
pub fn record_selection<T: Scalar>(tape: &mut Tape<T>, theta: NodeId) -> (NodeId, Vec<usize>) {
    let soft = tape.softmax_rows(theta);
    let order = leading_order(tape.value(soft));
    let sorted = tape.permute_rows(soft, order.clone());
    (sorted, order)
}

/// `[x, P x, …, P^m x]` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionStack<T = f64> {
    data: Tensor<T>,
}

impl<T: Scalar> DiffusionStack<T> {
    pub fn steps(&self) -> usize {
        self.data.rows() - 1
    }

    /// `Pᵗ x`; `t = 0` is the input itself.
    pub fn slice(&self, t: usize) -> GraphSignal<T> {
        let shape = self.data.shape();
        GraphSignal::from_node_major(shape[1], shape[2], self.data.row(t).to_vec())
            .expect("stack slices are well formed")
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.data
    }
}

pub fn diffusion_stack<T: Scalar>(
    op: &DiffusionOperator<T>,
    x: &GraphSignal<T>,
    steps: usize,
) -> Result<DiffusionStack<T>> {
    if steps < 1 {
        return Err(Error::InvalidConfig("diffusion stack needs at least one step".into()));
    }
    if x.n() != op.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal on {} nodes, operator on {}",
            x.n(),
            op.n()
        )));
    }
    Ok(DiffusionStack {
        data: diffusion_stack_forward(&signal_tensor(x), op, steps),
    })
}

/// Relaxed filter responses `Ψ̃_0, …, Ψ̃_{J−1}, Φ̃_J`.
pub fn legs_filters<T: Scalar>(
    f: &SelectionMatrix<T>,
    stack: &DiffusionStack<T>,
) -> Result<Vec<GraphSignal<T>>> {
    if f.f.row_len() != stack.steps() {
        return Err(Error::DimensionMismatch(format!(
            "selection over {} steps, stack has {}",
            f.f.row_len(),
            stack.steps()
        )));
    }
    let weights = filter_weights_forward(&f.f);
    let out = stack_combine_forward(&weights, &stack.data);
    let shape = out.shape();
    Ok((0..shape[0])
        .map(|k| {
            GraphSignal::from_node_major(shape[1], shape[2], out.row(k).to_vec())
                .expect("combined slices are well formed")
        })
        .collect())
}

fn signal_tensor<T: Scalar>(x: &GraphSignal<T>) -> Tensor<T> {
    Tensor::new(vec![x.n(), x.channels()], x.as_slice().to_vec())
}

/// Records the full cascade and moment aggregation for one graph.
///
/// `weights` is the `(J+1) × (m+1)` output of [`Tape::filter_weights`].
/// Returns the 1-D feature node, laid out as [`ScatterConfig::feature_index`].
pub fn record_features<T: Scalar>(
    tape: &mut Tape<T>,
    weights: NodeId,
    op: &Arc<DiffusionOperator<T>>,
    x: &GraphSignal<T>,
    cfg: &ScatterConfig,
) -> Result<(NodeId, Vec<FeatureKey>)> {
    cfg.validate()?;
    let wshape = tape.shape(weights).to_vec();
    let (filters, depth) = (wshape[0], wshape[1]);
    if cfg.num_wavelets + 1 != filters {
        return Err(Error::DimensionMismatch(format!(
            "config expects {} wavelets, selection provides {}",
            cfg.num_wavelets,
            filters - 1
        )));
    }
    if x.n() != op.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal on {} nodes, operator on {}",
            x.n(),
            op.n()
        )));
    }
    let steps = depth - 1;
    let channels = x.channels();
    let paths = cfg.paths();

    // Prefixes that need their own filtered block.
    let mut parents: Vec<Vec<usize>> = vec![Vec::new()];
    for p in paths.iter().filter(|p| p.order() > 1) {
        let prefix = p.indices()[..p.order() - 1].to_vec();
        if !parents.contains(&prefix) {
            parents.push(prefix);
        }
    }
    parents.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));

    let input = tape.constant(signal_tensor(x));
    // |filter block| of every parent prefix: (J+1) × n × C
    let mut blocks: BTreeMap<Vec<usize>, NodeId> = BTreeMap::new();
    for prefix in &parents {
        let source = match prefix.split_last() {
            None => input,
            Some((&last, head)) => {
                let parent = blocks[head];
                tape.select(parent, last)
            }
        };
        let stack = tape.diffusion_stack(source, Arc::clone(op), steps);
        let combined = tape.stack_combine(weights, stack);
        let rectified = tape.abs(combined);
        blocks.insert(prefix.clone(), rectified);
    }

    let order0 = tape.abs(input);
    let mut moments: BTreeMap<(Option<Vec<usize>>, u32), NodeId> = BTreeMap::new();
    for &q in &cfg.q_list {
        let pw = tape.powi(order0, q as i32);
        moments.insert((None, q), tape.sum_axis(pw, 0));
        for (prefix, &block) in &blocks {
            let pw = tape.powi(block, q as i32);
            moments.insert((Some(prefix.clone()), q), tape.sum_axis(pw, 1));
        }
    }

    let index = cfg.feature_index(channels);
    let mut sources: Vec<NodeId> = Vec::new();
    let mut slot: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut picks = Vec::with_capacity(index.len());
    for key in &index {
        let (node, flat) = match &key.path {
            FeaturePath::Cascade(p) if p.order() == 0 => (moments[&(None, key.q)], key.channel),
            FeaturePath::Cascade(p) => {
                let (&last, prefix) = p.indices().split_last().expect("nonempty path");
                (moments[&(Some(prefix.to_vec()), key.q)], last * channels + key.channel)
            }
            FeaturePath::LowPass => (
                moments[&(Some(Vec::new()), key.q)],
                cfg.num_wavelets * channels + key.channel,
            ),
        };
        let s = *slot.entry(node).or_insert_with(|| {
            sources.push(node);
            sources.len() - 1
        });
        picks.push((s, flat));
    }
    let mut features = tape.gather(sources, picks);
    if cfg.normalize_moments && x.n() > 0 {
        features = tape.scale(features, T::one() / T::from_usize_lossy(x.n()));
    }
    Ok((features, index))
}

/// Graph-level features for one graph under `params`.
pub fn legs_forward<T: Scalar>(
    op: &Arc<DiffusionOperator<T>>,
    x: &GraphSignal<T>,
    params: &SelectionParams<T>,
    cfg: &ScatterConfig,
) -> Result<FeatureVector<T>> {
    if params.num_scales() != cfg.num_wavelets {
        return Err(Error::DimensionMismatch(format!(
            "{} selection rows for {} wavelets",
            params.num_scales(),
            cfg.num_wavelets
        )));
    }
    let mut tape = Tape::new();
    let theta = tape.constant(params.theta.clone());
    let (f, _) = record_selection(&mut tape, theta);
    let weights = tape.filter_weights(f);
    let (features, index) = record_features(&mut tape, weights, op, x, cfg)?;
    Ok(FeatureVector {
        values: tape.value(features).data().to_vec(),
        index,
    })
}

/// Records the forward pass with `Θ` as a trainable parameter.
pub fn record_legs<T: Scalar>(
    tape: &mut Tape<T>,
    op: &Arc<DiffusionOperator<T>>,
    x: &GraphSignal<T>,
    params: &SelectionParams<T>,
    cfg: &ScatterConfig,
) -> Result<NodeId> {
    let theta = tape.param(THETA, params.theta.clone());
    let (f, _) = record_selection(tape, theta);
    let weights = tape.filter_weights(f);
    record_features(tape, weights, op, x, cfg).map(|(node, _)| node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{build_bank, dyadic_scales};
    use crate::graph::{build_graph, lazy_diffusion};
    use crate::scattering::scatter_features;

    fn two_node() -> Arc<DiffusionOperator<f64>> {
        Arc::new(lazy_diffusion(&build_graph::<f64>(2, &[(0, 1, 1.0)]).unwrap()).unwrap())
    }

    fn small_graph() -> Arc<DiffusionOperator<f64>> {
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 2.0), (3, 4, 1.0), (4, 0, 1.0), (1, 3, 0.5), (4, 5, 1.0)];
        Arc::new(lazy_diffusion(&build_graph::<f64>(6, &edges).unwrap()).unwrap())
    }

    #[test]
    fn stack_on_idempotent_operator() {
        let s = diffusion_stack(&two_node(), &GraphSignal::from_vec(vec![1.0, 0.0]), 2).unwrap();
        assert_eq!(s.steps(), 2);
        assert_eq!(s.slice(1).into_vec(), vec![0.5, 0.5]);
        assert_eq!(s.slice(2).into_vec(), vec![0.5, 0.5]);
        assert!(diffusion_stack(&two_node(), &GraphSignal::from_vec(vec![1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn stationary_distribution_is_fixed() {
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 1.0)];
        let g = build_graph::<f64>(4, &edges).unwrap();
        let op = lazy_diffusion(&g).unwrap();
        let total: f64 = g.degrees().iter().sum();
        let pi = GraphSignal::from_vec(g.degrees().iter().map(|d| d / total).collect());
        let s = diffusion_stack(&op, &pi, 5).unwrap();
        for t in 0..=5 {
            assert!(s.slice(t).max_abs_diff(&pi) < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_examples() {
        let mut theta = Tensor::zeros(vec![1, 16]);
        theta.data_mut()[0] = 10.0;
        let f = selection_matrix(&SelectionParams::new(theta).unwrap());
        let expected = 10f64.exp() / (10f64.exp() + 15.0);
        assert!((f.matrix().data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.99932).abs() < 1e-5);
        assert_eq!(f.leading_steps(), vec![1]);

        let uniform = selection_matrix(&SelectionParams::<f64>::zeros(3, 4).unwrap());
        assert!(uniform.matrix().data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rows_are_sorted_by_leading_step() {
        let m = 16;
        let mut theta = Tensor::zeros(vec![4, m]);
        for (r, step) in [8usize, 1, 4, 2].into_iter().enumerate() {
            theta.data_mut()[r * m + step - 1] = 3.0;
        }
        let f = selection_matrix(&SelectionParams::new(theta).unwrap());
        assert_eq!(f.row_order(), &[1, 3, 2, 0]);
        assert_eq!(f.leading_steps(), vec![1, 2, 4, 8]);
        for r in 0..4 {
            assert!((f.matrix().row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_keep_original_order() {
        let theta = Tensor::matrix(2, 3, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let f = selection_matrix(&SelectionParams::new(theta).unwrap());
        assert_eq!(f.row_order(), &[0, 1]);
    }

    #[test]
    fn params_validation() {
        assert!(SelectionParams::<f64>::zeros(5, 4).is_err());
        assert!(SelectionParams::<f64>::dyadic(6, 16, 1.0).is_err());
        assert!(SelectionParams::new(Tensor::matrix(1, 2, vec![f64::NAN, 0.0])).is_err());
        let p = SelectionParams::<f64>::fixed(5, 16).unwrap();
        let steps: Vec<usize> = (0..5).map(|r| argmax(p.theta().row(r)) + 1).collect();
        assert_eq!(steps, vec![1, 2, 4, 8, 16]);
    }

    #[test]
    fn one_hot_selection_reproduces_fixed_bank() {
        let op = small_graph();
        let x = GraphSignal::from_columns(&[vec![0.3, -1.0, 2.0, 0.1, 0.0, 1.5], vec![1.0; 6]]).unwrap();
        let f = selection_matrix(&SelectionParams::fixed(5, 16).unwrap());
        let stack = diffusion_stack(&op, &x, 16).unwrap();
        let relaxed = legs_filters(&f, &stack).unwrap();
        let bank = build_bank(Arc::clone(&op), dyadic_scales(4, 16).unwrap());
        let exact = bank.apply_all(&x).unwrap();
        for (a, b) in relaxed.iter().zip(&exact) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
    }

    #[test]
    fn uniform_rows_kill_middle_wavelets_and_all_filters_telescope() {
        let op = small_graph();
        let x = GraphSignal::from_vec(vec![0.3, -1.0, 2.0, 0.1, 0.0, 1.5]);
        let f = selection_matrix(&SelectionParams::zeros(4, 16).unwrap());
        let stack = diffusion_stack(&op, &x, 16).unwrap();
        let out = legs_filters(&f, &stack).unwrap();
        for mid in &out[1..4] {
            assert!(mid.as_slice().iter().all(|v| v.abs() < 1e-15));
        }
        let mut total = GraphSignal::zeros(6, 1);
        for y in &out {
            for (t, &v) in total.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *t += v;
            }
        }
        assert!(total.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn filters_reject_mismatched_depth() {
        let f = selection_matrix(&SelectionParams::<f64>::zeros(2, 8).unwrap());
        let stack = diffusion_stack(&two_node(), &GraphSignal::from_vec(vec![1.0, 0.0]), 4).unwrap();
        assert!(matches!(legs_filters(&f, &stack), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn fixed_forward_matches_scattering() {
        let op = small_graph();
        let x = GraphSignal::from_columns(&[vec![0.3, -1.0, 2.0, 0.1, 0.0, 1.5], vec![1.0, 2.0, 0.0, 1.0, 3.0, 1.0]])
            .unwrap();
        let cfg = ScatterConfig::default();
        let legs = legs_forward(&op, &x, &SelectionParams::fixed(5, 16).unwrap(), &cfg).unwrap();
        let bank = build_bank(Arc::clone(&op), dyadic_scales(4, 16).unwrap());
        let oracle = scatter_features(&bank, &x, &cfg).unwrap();
        assert_eq!(legs.index, oracle.index);
        assert!(legs.max_rel_diff(&oracle) < 1e-10);
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let cfg = ScatterConfig::default();
        let f = legs_forward(
            &small_graph(),
            &GraphSignal::zeros(6, 1),
            &SelectionParams::learnable_init(5, 16).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
    }
}
