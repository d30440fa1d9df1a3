//! Gradient-descent training and stratified cross-validation.
//!
//! Training proceeds in two stages per batch. Every graph records its own
//! tape from `Θ` to its feature vector (in parallel). The feature rows are
//! then stacked into an input leaf of a head tape that standardizes them,
//! applies the head and the loss. After the head sweep, the adjoint of each
//! row seeds a reverse sweep of that graph's tape, and the resulting `Θ`
//! gradients are summed in batch order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{piecewise_diff_check, FdReport, Gradients, NodeId, Probe, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{DiffusionOperator, GraphSignal};
use crate::heads::{init_rbf_with, record_loss, FcnHead, Head, HeadKind, Targets, Task};
use crate::legs::{legs_forward, record_legs, selection_matrix, SelectionParams, THETA};
use crate::scalar::Scalar;
use crate::scattering::ScatterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Frozen dyadic selection; only the head trains.
    Fixed,
    /// Selection logits train with the head.
    Learn,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fixed => "fixed",
            Mode::Learn => "learn",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "learn" => Ok(Mode::Learn),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub head: HeadKind,
    pub mode: Mode,
    pub task: Task,
    pub folds: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Share of each training fold held out for early stopping.
    pub val_fraction: f64,
    pub hidden: usize,
    pub anchors: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Diffusion steps `m` available to the selection.
    pub max_step: usize,
    /// Logit on the dyadic steps when `Θ` starts training.
    pub init_sharpness: f64,
    pub scatter: ScatterConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            head: HeadKind::Fcn,
            mode: Mode::Fixed,
            task: Task::Classify,
            folds: 10,
            patience: 20,
            val_fraction: 0.1,
            hidden: crate::heads::DEFAULT_HIDDEN,
            anchors: crate::heads::DEFAULT_ANCHORS,
            bn_eps: crate::heads::BN_EPS,
            bn_momentum: crate::heads::BN_MOMENTUM,
            max_step: crate::legs::DEFAULT_MAX_STEP,
            init_sharpness: crate::legs::LEARN_INIT_SHARPNESS,
            scatter: ScatterConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("learning rate must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive");
        }
        if self.folds < 2 {
            return bad("need at least two folds");
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return bad("validation fraction must lie in [0, 0.5)");
        }
        if self.hidden == 0 || self.anchors == 0 {
            return bad("head widths must be positive");
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return bad("batchnorm eps must be positive and momentum within [0, 1]");
        }
        self.scatter.validate()?;
        if self.scatter.num_wavelets > self.max_step {
            return bad("more wavelets than diffusion steps");
        }
        Ok(())
    }

    /// Initial selection for the configured mode.
    pub fn initial_selection<T: Scalar>(&self) -> Result<SelectionParams<T>> {
        let (j, m) = (self.scatter.num_wavelets, self.max_step);
        match self.mode {
            Mode::Fixed => SelectionParams::fixed(j, m),
            Mode::Learn => SelectionParams::dyadic(j, m, self.init_sharpness),
        }
    }
}

/// One graph ready for the forward pass.
#[derive(Debug, Clone)]
pub struct Sample<T = f64> {
    pub op: Arc<DiffusionOperator<T>>,
    pub signal: GraphSignal<T>,
}

#[derive(Debug, Clone)]
pub struct TrainingData<T = f64> {
    pub samples: Vec<Sample<T>>,
    pub targets: Targets<T>,
}

impl<T: Scalar> TrainingData<T> {
    pub fn new(samples: Vec<Sample<T>>, targets: Targets<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooFewSamples("dataset is empty".into()));
        }
        if samples.len() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} graphs but {} targets",
                samples.len(),
                targets.len()
            )));
        }
        let c = samples[0].signal.channels();
        for (i, s) in samples.iter().enumerate() {
            if s.signal.channels() != c || s.signal.n() != s.op.n() {
                return Err(Error::DimensionMismatch(format!("sample {i} has an inconsistent signal")));
            }
        }
        Ok(Self { samples, targets })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples[0].signal.channels()
    }
}

const ABS_SPREAD_FLOOR: f64 = 1e-12;
const REL_SPREAD_FLOOR: f64 = 1e-6;

/// Per-column z-scoring. Columns whose spread is negligible next to their
/// magnitude (identical values up to roundoff) pass through centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T = f64> {
    pub mean: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(rows: &[Vec<T>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::TooFewSamples("no rows to standardize".into()))?;
        let d = first.len();
        let nb = T::from_usize_lossy(rows.len());
        let mut mean = vec![T::zero(); d];
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch("rows differ in width".into()));
            }
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
        let mut peak = vec![T::zero(); d];
        for r in rows {
            for (p, &a) in peak.iter_mut().zip(r) {
                *p = p.max(a.abs());
            }
        }
        let scale = var
            .iter()
            .zip(&peak)
            .map(|(&v, &p)| {
                let s = v.sqrt();
                if s > T::lit(ABS_SPREAD_FLOOR).max(p * T::lit(REL_SPREAD_FLOOR)) {
                    T::one() / s
                } else {
                    T::one()
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[T]) -> Vec<T> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&a, (&m, &s))| (a - m) * s)
            .collect()
    }
}

/// Whitens regression targets with the statistics of `values`.
pub fn whiten<T: Scalar>(values: &[T]) -> Result<(Vec<T>, Standardizer<T>)> {
    let rows: Vec<Vec<T>> = values.iter().map(|&v| vec![v]).collect();
    let st = Standardizer::fit(&rows)?;
    Ok((values.iter().map(|&v| st.apply(&[v])[0]).collect(), st))
}

/// Everything needed to map a graph to a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T = f64> {
    pub mode: Mode,
    pub selection: SelectionParams<T>,
    pub scatter: ScatterConfig,
    pub standardizer: Standardizer<T>,
    pub head: Head<T>,
}

impl<T: Scalar> Model<T> {
    /// Unstandardized features of one graph.
    pub fn raw_features(&self, s: &Sample<T>) -> Result<Vec<T>> {
        legs_forward(&s.op, &s.signal, &self.selection, &self.scatter).map(|f| f.values)
    }

    fn learns_selection(&self) -> bool {
        self.mode == Mode::Learn
    }

    /// Names and values of every trainable tensor, `Θ` first when it trains.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        if self.learns_selection() {
            out.push((THETA.to_string(), self.selection.theta().clone()));
        }
        out.extend(self.head.params().into_iter().map(|(n, t)| (n.to_string(), t.clone())));
        out
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        if name == THETA {
            return self.learns_selection().then(|| self.selection.theta_mut());
        }
        self.head.param_mut(name)
    }

    /// All trainable values concatenated in [`Model::params`] order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params().into_iter().flat_map(|(_, t)| t.into_data()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        let mut at = 0;
        for (name, t) in self.params() {
            let dst = self.param_mut(&name).expect("listed parameter exists");
            dst.data_mut().copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
        debug_assert_eq!(at, flat.len());
    }

    /// Gradients flattened in [`Model::params`] order; absent entries are zero.
    pub fn flatten_grads(&self, grads: &Gradients<T>) -> Vec<T> {
        self.params()
            .into_iter()
            .flat_map(|(name, t)| match grads.get(&name) {
                Some(g) => g.data().to_vec(),
                None => vec![T::zero(); t.len()],
            })
            .collect()
    }

    /// Adds independent `N(0, std²)` noise to every entry of parameter `name`.
    pub fn perturb(&mut self, name: &str, std: f64, seed: u64) -> Result<()> {
        let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(format!("noise std {std}: {e}")))?;
        let dst = self
            .param_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no trainable parameter named {name}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in dst.data_mut() {
            *v += T::lit(noise.sample(&mut rng));
        }
        Ok(())
    }
}

/// Feature rows that do not change during training.
pub type FeatureCache<T> = Vec<Vec<T>>;

/// Raw features of every sample under `selection`, in sample order.
pub fn compute_features<T: Scalar>(
    samples: &[Sample<T>],
    selection: &SelectionParams<T>,
    scatter: &ScatterConfig,
) -> Result<FeatureCache<T>> {
    samples
        .par_iter()
        .map(|s| legs_forward(&s.op, &s.signal, selection, scatter).map(|f| f.values))
        .collect()
}

fn raw_rows<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample<T>],
    cache: Option<&[Vec<T>]>,
    idx: &[usize],
) -> Result<Vec<Vec<T>>> {
    match cache {
        Some(c) if !model.learns_selection() => Ok(idx.iter().map(|&i| c[i].clone()).collect()),
        _ => idx.par_iter().map(|&i| model.raw_features(&samples[i])).collect(),
    }
}

fn to_matrix<T: Scalar>(rows: &[Vec<T>]) -> Tensor<T> {
    let d = rows.first().map_or(0, Vec::len);
    Tensor::matrix(rows.len(), d, rows.concat())
}

/// Loss, gradients and batchnorm statistics of one training-mode batch.
#[derive(Debug, Clone)]
pub struct BatchEval<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    pub batch_stats: Option<(Vec<T>, Vec<T>)>,
    /// Smooth piece of the loss at this point, see [`Tape::branches`].
    pub branches: Vec<u32>,
}

/// Training-mode loss and gradients on `batch`.
///
/// `targets` covers every sample and is indexed by `batch`. `cache` holds raw
/// features for frozen selections and is ignored when `Θ` trains.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample<T>],
    cache: Option<&[Vec<T>]>,
    targets: &Targets<T>,
    batch: &[usize],
) -> Result<BatchEval<T>> {
    let graph_tapes: Vec<(Tape<T>, NodeId)> = if model.learns_selection() {
        batch
            .par_iter()
            .map(|&i| {
                let s = &samples[i];
                let mut tape = Tape::new();
                let out = record_legs(&mut tape, &s.op, &s.signal, &model.selection, &model.scatter)?;
                Ok((tape, out))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let rows: Vec<Vec<T>> = if model.learns_selection() {
        graph_tapes.iter().map(|(t, n)| t.value(*n).data().to_vec()).collect()
    } else {
        raw_rows(model, samples, cache, batch)?
    };
    if rows[0].len() != model.standardizer.width() {
        return Err(Error::DimensionMismatch("feature width differs from the fitted standardizer".into()));
    }

    let mut tape = Tape::new();
    let x = tape.input(to_matrix(&rows));
    let z = tape.scale_shift(x, &model.standardizer.mean, model.standardizer.scale.clone());
    let rec = model.head.record(&mut tape, z, true);
    let loss = record_loss(&mut tape, rec.output, &targets.subset(batch))?;
    let value = tape.value(loss).item();
    let adj = tape.backward_seeded(loss, Tensor::scalar(T::one()));
    let mut grads = tape.collect_params(&adj);

    if model.learns_selection() {
        let dx = adj.get(x).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(x).to_vec()));
        let per_graph: Vec<Gradients<T>> = graph_tapes
            .par_iter()
            .enumerate()
            .map(|(b, (t, out))| {
                let seed = Tensor::vector(dx.row(b).to_vec());
                t.collect_params(&t.backward_seeded(*out, seed))
            })
            .collect();
        let mut theta = Gradients {
            by_param: BTreeMap::new(),
            disconnected: Vec::new(),
        };
        for g in &per_graph {
            theta.accumulate(g);
        }
        let g = theta
            .by_param
            .remove(THETA)
            .unwrap_or_else(|| Tensor::zeros(model.selection.theta().shape().to_vec()));
        grads.by_param.insert(THETA.to_string(), g);
    }
    let mut branches = tape.branches();
    for (t, _) in &graph_tapes {
        branches.extend(t.branches());
    }
    Ok(BatchEval {
        loss: value,
        grads,
        batch_stats: rec.batch_stats,
        branches,
    })
}

/// Eval-mode predictions (`B × K`) for the samples in `idx`.
pub fn predict<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample<T>],
    cache: Option<&[Vec<T>]>,
    idx: &[usize],
) -> Result<Tensor<T>> {
    let rows: Vec<Vec<T>> = raw_rows(model, samples, cache, idx)?
        .iter()
        .map(|r| model.standardizer.apply(r))
        .collect();
    Ok(model.head.predict(&to_matrix(&rows)))
}

/// Accuracy for classes, mean squared error for values.
pub fn metric<T: Scalar>(pred: &Tensor<T>, targets: &Targets<T>) -> f64 {
    match targets {
        Targets::Classes { labels, .. } => {
            let hits = labels
                .iter()
                .enumerate()
                .filter(|&(r, &y)| {
                    let row = pred.row(r);
                    let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                    best == y
                })
                .count();
            hits as f64 / labels.len() as f64
        }
        Targets::Values(v) => {
            v.iter()
                .enumerate()
                .map(|(r, &t)| (pred.row(r)[0] - t).to_f64_lossy().powi(2))
                .sum::<f64>()
                / v.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T = f64> {
    pub model: Model<T>,
    pub history: History,
    /// Regression target standardization fitted on the training rows.
    pub target_scaler: Option<Standardizer<T>>,
    /// RBF only: anchors inside the normalized data range at initialization.
    pub anchor_range_ok: Option<bool>,
}

/// Trains on every sample of `data`.
pub fn train<T: Scalar>(data: &TrainingData<T>, cfg: &TrainConfig) -> Result<FitOutcome<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    fit(data, &idx, None, cfg, cfg.seed)
}

/// Trains on the samples in `train_idx`, holding out a stratified share for
/// early stopping.
pub fn fit<T: Scalar>(
    data: &TrainingData<T>,
    train_idx: &[usize],
    cache: Option<&[Vec<T>]>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    check_task(&data.targets, cfg.task)?;
    if train_idx.is_empty() {
        return Err(Error::TooFewSamples("empty training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fit_idx, val_idx) = validation_split(&data.targets, train_idx, cfg.val_fraction, &mut rng)?;

    let owned;
    let cache = match (cfg.mode, cache) {
        (Mode::Fixed, None) => {
            owned = compute_features(&data.samples, &cfg.initial_selection()?, &cfg.scatter)?;
            Some(owned.as_slice())
        }
        (Mode::Fixed, Some(c)) => Some(c),
        (Mode::Learn, _) => None,
    };

    let (targets, target_scaler) = match &data.targets {
        Targets::Values(v) => {
            let fit_vals: Vec<T> = fit_idx.iter().map(|&i| v[i]).collect();
            let (_, st) = whiten(&fit_vals)?;
            (Targets::Values(v.iter().map(|&a| st.apply(&[a])[0]).collect()), Some(st))
        }
        t => (t.clone(), None),
    };

    let (mut model, anchor_range_ok) = init_model(data, &fit_idx, cache, &targets, cfg, cfg.initial_selection()?, seed)?;

    let (lr, mu) = (T::lit(cfg.lr), T::lit(cfg.momentum));
    let mut velocity: BTreeMap<String, Tensor<T>> = BTreeMap::new();
    let mut history = History {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best: Option<(f64, Model<T>)> = None;
    let mut order = fit_idx.clone();
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let ev = batch_gradients(&model, &data.samples, cache, &targets, batch)?;
            let l = ev.loss.to_f64_lossy();
            if !l.is_finite() {
                return Err(Error::DivergenceDetected { epoch, loss: l });
            }
            total += l * batch.len() as f64;
            for (name, g) in &ev.grads.by_param {
                let Some(p) = model.param_mut(name) else { continue };
                let v = velocity
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
                for ((vi, &gi), pi) in v.data_mut().iter_mut().zip(g.data()).zip(p.data_mut()) {
                    *vi = mu * *vi - lr * gi;
                    *pi += *vi;
                }
            }
            if let Some((mean, var)) = &ev.batch_stats {
                model.head.absorb_batch_stats(mean, var);
            }
        }
        history.train_loss.push(total / order.len() as f64);

        if val_idx.is_empty() {
            history.best_epoch = epoch;
            continue;
        }
        let pred = predict(&model, &data.samples, cache, &val_idx)?;
        let vl = crate::heads::loss(&pred, &targets.subset(&val_idx))?.to_f64_lossy();
        if !vl.is_finite() {
            return Err(Error::DivergenceDetected { epoch, loss: vl });
        }
        history.val_loss.push(vl);
        if best.as_ref().is_none_or(|(b, _)| vl < *b) {
            best = Some((vl, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some((_, m)) = best {
        model = m;
    }
    Ok(FitOutcome {
        model,
        history,
        target_scaler,
        anchor_range_ok,
    })
}

/// Fresh model for `cfg` starting at `selection`: standardizer fitted on the
/// raw features of `fit_idx`, head initialized from `seed`. Also reports, for the RBF head,
/// whether the anchors lie inside the normalized data range.
pub fn init_model<T: Scalar>(
    data: &TrainingData<T>,
    fit_idx: &[usize],
    cache: Option<&[Vec<T>]>,
    targets: &Targets<T>,
    cfg: &TrainConfig,
    selection: SelectionParams<T>,
    seed: u64,
) -> Result<(Model<T>, Option<bool>)> {
    let mut model = Model {
        mode: cfg.mode,
        selection,
        scatter: cfg.scatter.clone(),
        standardizer: Standardizer {
            mean: Vec::new(),
            scale: Vec::new(),
        },
        head: Head::Fcn(FcnHead::new(1, 1, 1, 0)?),
    };
    let first = raw_rows(&model, &data.samples, cache, fit_idx)?;
    model.standardizer = Standardizer::fit(&first)?;
    let z: Vec<Vec<T>> = first.iter().map(|r| model.standardizer.apply(r)).collect();
    let d = model.standardizer.width();
    let outputs = targets.output_width();
    let head_seed = seed ^ 0x5e_ed0f_4ead;
    let mut anchor_range_ok = None;
    model.head = match cfg.head {
        HeadKind::Fcn => Head::Fcn(FcnHead::new(d, cfg.hidden, outputs, head_seed)?),
        HeadKind::Rbf => {
            let h = init_rbf_with(&z, cfg.anchors, outputs, head_seed, T::lit(cfg.bn_eps), T::lit(cfg.bn_momentum))?;
            anchor_range_ok = Some(h.anchors_in_range(&z));
            Head::Rbf(h)
        }
    };
    Ok((model, anchor_range_ok))
}

fn check_task<T: Scalar>(targets: &Targets<T>, task: Task) -> Result<()> {
    if targets.task() != task {
        return Err(Error::InvalidConfig(format!(
            "task is {task} but the dataset carries {} targets",
            targets.task()
        )));
    }
    Ok(())
}

/// Splits `idx` into (fit, validation) with stratification by class.
fn validation_split<T: Scalar>(
    targets: &Targets<T>,
    idx: &[usize],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if fraction <= 0.0 {
        return Ok((idx.to_vec(), Vec::new()));
    }
    let k = (1.0 / fraction).round().max(2.0) as usize;
    if idx.len() < k {
        return Ok((idx.to_vec(), Vec::new()));
    }
    let folds = stratified_folds(&targets.subset(idx), k, rng_seed(rng))?;
    let val: Vec<usize> = folds[0].iter().map(|&i| idx[i]).collect();
    let fit: Vec<usize> = folds[1..].iter().flatten().map(|&i| idx[i]).collect();
    Ok((fit, val))
}

fn rng_seed(rng: &mut ChaCha8Rng) -> u64 {
    use rand::Rng;
    rng.random()
}

/// Partitions sample indices into `k` test folds.
///
/// Classes are shuffled and dealt round-robin with a running offset, so each
/// class count per fold is the floor or ceiling of its proportional share
/// and fold sizes differ by at most one.
pub fn stratified_folds<T: Scalar>(targets: &Targets<T>, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = targets.len();
    if k < 2 || k > n {
        return Err(Error::TooFewSamples(format!("{k} folds over {n} samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match targets {
        Targets::Classes { labels, count } => {
            let width = (*count).max(labels.iter().max().map_or(0, |m| m + 1));
            let mut g = vec![Vec::new(); width];
            for (i, &y) in labels.iter().enumerate() {
                g[y].push(i);
            }
            g
        }
        Targets::Values(v) => vec![(0..v.len()).collect()],
    };
    let mut folds = vec![Vec::new(); k];
    let mut pos = 0;
    for mut g in groups {
        g.shuffle(&mut rng);
        for i in g {
            folds[pos % k].push(i);
            pos += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Accuracy or mean squared error on the test fold.
    pub metric: f64,
    pub test_loss: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub anchor_range_ok: Option<bool>,
    /// Final sorted selection matrix `F`, one row per wavelet.
    pub selection: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValResult {
    /// `accuracy` or `mse`.
    pub metric_name: String,
    pub folds: Vec<FoldResult>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fold as u64 + 1))
}

/// Stratified k-fold evaluation; folds train independently and in parallel.
pub fn crossval<T: Scalar>(data: &TrainingData<T>, cfg: &TrainConfig) -> Result<CrossValResult> {
    cfg.validate()?;
    check_task(&data.targets, cfg.task)?;
    let folds = stratified_folds(&data.targets, cfg.folds, cfg.seed)?;
    let cache = match cfg.mode {
        Mode::Fixed => Some(compute_features(&data.samples, &cfg.initial_selection()?, &cfg.scatter)?),
        Mode::Learn => None,
    };
    let results: Vec<FoldResult> = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let test = &folds[f];
            let train_idx: Vec<usize> = (0..folds.len()).filter(|&g| g != f).flat_map(|g| folds[g].clone()).collect();
            let out = fit(data, &train_idx, cache.as_deref(), cfg, fold_seed(cfg.seed, f))?;
            let mut targets = data.targets.subset(test);
            if let (Targets::Values(v), Some(st)) = (&mut targets, &out.target_scaler) {
                for a in v.iter_mut() {
                    *a = st.apply(&[*a])[0];
                }
            }
            let pred = predict(&out.model, &data.samples, cache.as_deref(), test)?;
            let f_rows = selection_matrix(&out.model.selection);
            let m = f_rows.matrix();
            Ok(FoldResult {
                fold: f,
                train_size: train_idx.len(),
                test_size: test.len(),
                metric: metric(&pred, &targets),
                test_loss: crate::heads::loss(&pred, &targets)?.to_f64_lossy(),
                epochs_run: out.history.epochs_run(),
                best_epoch: out.history.best_epoch,
                anchor_range_ok: out.anchor_range_ok,
                selection: (0..m.rows())
                    .map(|r| m.row(r).iter().map(|v| v.to_f64_lossy()).collect())
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.metric).collect();
    let (mean, std) = mean_std(&values);
    Ok(CrossValResult {
        metric_name: match cfg.task {
            Task::Classify => "accuracy".into(),
            Task::Regress => "mse".into(),
        },
        folds: results,
        mean,
        std,
    })
}

/// Finite-difference checks of the whole pipeline on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineCheck {
    /// Random directions within the `Θ` block (absent when the selection is
    /// frozen). Unit directions keep each probe at the scale of `‖∇Θ‖`, where
    /// single coordinates with tiny gradients would only measure roundoff.
    pub theta: Option<FdReport>,
    /// Random directions through every trainable parameter.
    pub all: FdReport,
}

impl PipelineCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.theta.map_or(0.0, |r| r.max_rel_error).max(self.all.max_rel_error)
    }
}

/// Compares backpropagated gradients of the training-mode batch loss with
/// central differences. Probes whose stencil crosses a sign change of an
/// `abs`/`relu` input or reorders the selection rows are excluded.
pub fn pipeline_gradcheck<T: Scalar>(
    model: &Model<T>,
    samples: &[Sample<T>],
    targets: &Targets<T>,
    batch: &[usize],
    eps: f64,
    directions: usize,
    seed: u64,
) -> Result<PipelineCheck> {
    let ev = batch_gradients(model, samples, None, targets, batch)?;
    let analytic = model.flatten_grads(&ev.grads);
    let point = model.flat_params();
    let mut probe_model = model.clone();
    let mut f = |p: &[T]| {
        probe_model.set_flat_params(p);
        batch_gradients(&probe_model, samples, None, targets, batch).map_or((T::nan(), None), |e| (e.loss, Some(e.branches)))
    };
    let theta = if model.learns_selection() {
        let len = model.selection.theta().len();
        let theta_point = point[..len].to_vec();
        let rest = point[len..].to_vec();
        let mut g = |p: &[T]| f(&[p, rest.as_slice()].concat());
        Some(piecewise_diff_check(
            &mut g,
            &theta_point,
            &analytic[..len],
            eps,
            Probe::RandomDirections {
                count: directions,
                seed: seed ^ 0x7e7a,
            },
        )?)
    } else {
        None
    };
    let all = piecewise_diff_check(
        &mut f,
        &point,
        &analytic,
        eps,
        Probe::RandomDirections { count: directions, seed },
    )?;
    Ok(PipelineCheck { theta, all })
}
