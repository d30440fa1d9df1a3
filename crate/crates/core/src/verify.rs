//! Randomized verification suites: telescoping, frame bounds and
//! permutation symmetry on a single graph, and finite-difference checks of
//! the full training pipeline.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::data::{synth_scales_dataset, DatasetBundle, NodeFeatureSpec};
use crate::error::Result;
use crate::filterbank::{build_bank, frame_certificate, ScaleSequence};
use crate::graph::{build_graph, lazy_diffusion, Graph, GraphSignal};
use crate::heads::HeadKind;
use crate::legs::{diffusion_stack, legs_filters, legs_forward, selection_matrix, SelectionParams};
use crate::scattering::{scatter_features, scatter_node, FeatureVector, ScatterConfig};
use crate::train::{init_model, pipeline_gradcheck, Mode, PipelineCheck, TrainConfig};

pub const TELESCOPING_TOL: f64 = 1e-10;
pub const EQUIVARIANCE_TOL: f64 = 1e-10;
pub const INVARIANCE_TOL: f64 = 1e-9;
pub const GRADCHECK_TOL: f64 = 1e-4;

const GRADCHECK_EPS: f64 = 1e-4;
const GRADCHECK_DIRECTIONS: usize = 32;
const GRADCHECK_GRAPHS: usize = 12;
const GRADCHECK_ANCHORS: usize = 8;
const ANCHOR_JITTER: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: String,
    pub trials: usize,
    /// Largest observed violation measure (a ratio for the frame suite).
    pub worst: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} trials, worst {:.3e} (tolerance {:.0e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.worst,
            self.tolerance
        )
    }
}

/// Connected random graph: a random spanning tree plus extra edges with
/// probability `p`, weights uniform in `[0.5, 2]`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> Graph {
    let mut edges = Vec::new();
    let mut present = std::collections::HashSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        present.insert((u, v));
        edges.push((u, v, rng.random_range(0.5..2.0)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !present.contains(&(i, j)) && rng.random_bool(p) {
                edges.push((i, j, rng.random_range(0.5..2.0)));
            }
        }
    }
    build_graph(n, &edges).expect("generated edges are valid")
}

pub fn random_signal(n: usize, channels: usize, rng: &mut impl Rng) -> GraphSignal {
    let data = (0..n * channels).map(|_| StandardNormal.sample(rng)).collect();
    GraphSignal::from_node_major(n, channels, data).expect("sized by construction")
}

pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Logits with standard normal entries.
pub fn random_selection(j: usize, m: usize, rng: &mut impl Rng) -> Result<SelectionParams> {
    let data = (0..j * m).map(|_| StandardNormal.sample(rng)).collect();
    SelectionParams::new(Tensor::matrix(j, m, data))
}

/// `‖Σ_j filter_j x − x‖_∞` on random signals.
pub fn telescoping_suite(g: &Graph, scales: &ScaleSequence, trials: usize, seed: u64) -> Result<SuiteOutcome> {
    let bank = build_bank(Arc::new(lazy_diffusion(g)?), scales.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_signal(g.n(), 1, &mut rng);
        let mut total = GraphSignal::zeros(g.n(), 1);
        for y in bank.apply_all(&x)? {
            for (t, v) in total.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *t += v;
            }
        }
        worst = worst.max(total.max_abs_diff(&x));
    }
    Ok(SuiteOutcome {
        name: "telescoping".into(),
        trials,
        worst,
        tolerance: TELESCOPING_TOL,
        pass: worst < TELESCOPING_TOL,
    })
}

/// Lower and upper frame bounds. `worst` is the largest normalized bound
/// violation, `max(C‖x‖² − E, E − ‖x‖²) / ‖x‖²`.
pub fn frame_suite(g: &Graph, scales: &ScaleSequence, trials: usize, seed: u64) -> Result<SuiteOutcome> {
    let cert = frame_certificate(g, scales, trials, seed)?;
    let worst = cert
        .trials
        .iter()
        .filter(|t| t.norm_sq > 0.0)
        .map(|t| ((cert.constant * t.norm_sq - t.energy).max(t.energy - t.norm_sq)) / t.norm_sq)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(SuiteOutcome {
        name: format!("frame bounds (C = {:.6})", cert.constant),
        trials,
        worst,
        tolerance: 1e-8,
        pass: cert.pass,
    })
}

/// Normwise relative difference within each (channel, q) block, worst block.
/// Entries left by near-total cancellation between diffusion powers carry
/// roundoff on the scale of their block, not of themselves.
fn rel_diff(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let mut blocks: BTreeMap<(usize, u32), (f64, f64)> = BTreeMap::new();
    for ((k, x), y) in a.index.iter().zip(&a.values).zip(&b.values) {
        let (diff, scale) = blocks.entry((k.channel, k.q)).or_default();
        *diff = diff.max((x - y).abs());
        *scale = scale.max(x.abs()).max(y.abs());
    }
    blocks
        .values()
        .map(|&(diff, scale)| if scale > 0.0 { diff / scale } else { diff })
        .fold(0.0, f64::max)
}

/// Relabels the graph and signal at random and compares node-level
/// responses (equivariance) and graph-level features (invariance) for the
/// fixed bank and for the relaxed bank with random logits.
pub fn permutation_suite(g: &Graph, scales: &ScaleSequence, trials: usize, seed: u64) -> Result<Vec<SuiteOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = Arc::new(lazy_diffusion(g)?);
    let bank = build_bank(Arc::clone(&op), scales.clone());
    let j = scales.len();
    let m = scales.last();
    let cfg = ScatterConfig {
        num_wavelets: j,
        ..ScatterConfig::default()
    };
    let paths = cfg.paths();
    let (mut node_fixed, mut graph_fixed, mut node_legs, mut graph_legs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let x = random_signal(g.n(), 2, &mut rng);
        let perm = random_permutation(g.n(), &mut rng);
        let gp = g.permuted(&perm);
        let xp = x.permuted(&perm);
        let opp = Arc::new(lazy_diffusion(&gp)?);
        let bankp = build_bank(Arc::clone(&opp), scales.clone());

        for p in &paths {
            let a = scatter_node(&bank, p, &x)?.permuted(&perm);
            let b = scatter_node(&bankp, p, &xp)?;
            node_fixed = node_fixed.max(a.max_abs_diff(&b));
        }
        let fa = scatter_features(&bank, &x, &cfg)?;
        let fb = scatter_features(&bankp, &xp, &cfg)?;
        graph_fixed = graph_fixed.max(rel_diff(&fa, &fb));

        let theta = random_selection(j, m, &mut rng)?;
        let f = selection_matrix(&theta);
        let ra = legs_filters(&f, &diffusion_stack(&op, &x, m)?)?;
        let rb = legs_filters(&f, &diffusion_stack(&opp, &xp, m)?)?;
        for (a, b) in ra.iter().zip(&rb) {
            node_legs = node_legs.max(a.permuted(&perm).max_abs_diff(b));
        }
        let la = legs_forward(&op, &x, &theta, &cfg)?;
        let lb = legs_forward(&opp, &xp, &theta, &cfg)?;
        graph_legs = graph_legs.max(rel_diff(&la, &lb));
    }
    let outcome = |name: &str, worst: f64, tolerance: f64| SuiteOutcome {
        name: name.into(),
        trials,
        worst,
        tolerance,
        pass: worst < tolerance,
    };
    Ok(vec![
        outcome("node equivariance (fixed)", node_fixed, EQUIVARIANCE_TOL),
        outcome("graph invariance (fixed)", graph_fixed, INVARIANCE_TOL),
        outcome("node equivariance (learnable)", node_legs, EQUIVARIANCE_TOL),
        outcome("graph invariance (learnable)", graph_legs, INVARIANCE_TOL),
    ])
}

#[derive(Debug, Clone)]
pub struct PointCheck {
    pub head: HeadKind,
    pub point: usize,
    pub check: PipelineCheck,
}

impl PointCheck {
    /// Compared and excluded probes over both probe families.
    pub fn probes(&self) -> (usize, usize) {
        self.check
            .theta
            .iter()
            .chain([&self.check.all])
            .fold((0, 0), |(c, e), r| (c + r.checked, e + r.excluded))
    }

    /// False when every probe of some family was excluded.
    pub fn conclusive(&self) -> bool {
        self.check.theta.iter().chain([&self.check.all]).all(|r| r.checked > 0)
    }
}

/// Finite-difference checks of the training-mode loss at `points` random
/// parameter settings for each head, on a small synthetic dataset.
///
/// Each setting draws standard normal logits and a fresh head; RBF anchors
/// are jittered off the rows they were drawn from.
pub fn pipeline_suite(seed: u64, points: usize) -> Result<Vec<PointCheck>> {
    let bundle: DatasetBundle<f64> = synth_scales_dataset(GRADCHECK_GRAPHS, seed)?;
    let data = bundle.training_data(NodeFeatureSpec::default())?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * points);
    for head in [HeadKind::Fcn, HeadKind::Rbf] {
        let cfg = TrainConfig {
            head,
            mode: Mode::Learn,
            anchors: GRADCHECK_ANCHORS,
            ..TrainConfig::default()
        };
        for point in 0..points {
            let point_seed = seed.wrapping_mul(1000).wrapping_add(point as u64);
            let selection = random_selection(cfg.scatter.num_wavelets, cfg.max_step, &mut rng)?;
            let (mut model, _) = init_model(&data, &all, None, &data.targets, &cfg, selection, point_seed)?;
            if head == HeadKind::Rbf {
                // a row sitting on its own anchor has zero slope there
                model.perturb("rbf.anchors", ANCHOR_JITTER, point_seed)?;
            }
            let check = pipeline_gradcheck(
                &model,
                &data.samples,
                &data.targets,
                &all,
                GRADCHECK_EPS,
                GRADCHECK_DIRECTIONS,
                point_seed,
            )?;
            out.push(PointCheck { head, point, check });
        }
    }
    Ok(out)
}

/// Worst relative error over `checks`; inconclusive points count as failures.
pub fn pipeline_outcome(checks: &[PointCheck]) -> SuiteOutcome {
    let worst = checks
        .iter()
        .map(|c| if c.conclusive() { c.check.max_rel_error() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    SuiteOutcome {
        name: "pipeline gradients".into(),
        trials: checks.len(),
        worst,
        tolerance: GRADCHECK_TOL,
        pass: worst < GRADCHECK_TOL,
    }
}
