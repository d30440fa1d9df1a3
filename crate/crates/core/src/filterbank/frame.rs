//! Numerical certificate for the two-sided energy bounds of a filter bank.
//!
//! With `M = D^{-1/2} P D^{1/2}` symmetric with spectrum in `[0, 1]`, the
//! bank energy of `x` in the `D^{-1/2}`-weighted norm is squeezed between
//! `C‖x‖²` and `‖x‖²`, where `C = min_{ξ∈[0,1]} ξ^{2 t_J} + (1 − ξ^{t_1})²`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ScaleSequence;
use crate::error::{Error, Result};
use crate::graph::weighted_norm_sq;
use crate::graph::{lazy_diffusion, DiffusionOperator, Graph, GraphSignal};
use crate::scalar::Scalar;

/// Largest node count for which the certificate densifies `P`.
pub const DEFAULT_DENSE_CAP: usize = 512;

const GRID_POINTS: usize = 20_000;
const GOLDEN_TOL: f64 = 1e-10;

/// Lower frame constant for scales `t1 ≤ tj`.
///
/// Dense grid scan on `[0, 1]` followed by golden-section refinement of the
/// best bracket.
pub fn frame_constant(t1: usize, tj: usize) -> f64 {
    assert!(1 <= t1 && t1 <= tj, "need 1 <= t1 <= tJ, got ({t1}, {tj})");
    let f = |xi: f64| xi.powi(2 * tj as i32) + (1.0 - xi.powi(t1 as i32)).powi(2);
    let h = 1.0 / GRID_POINTS as f64;
    let (best, _) = (0..=GRID_POINTS)
        .map(|k| (k, f(k as f64 * h)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let mut a = (best.saturating_sub(1)) as f64 * h;
    let mut b = ((best + 1).min(GRID_POINTS)) as f64 * h;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_TOL {
        if fc < fd {
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
    let refined = f(0.5 * (a + b));
    refined.min(f(best as f64 * h))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTrial {
    /// `‖x‖²` in the weighted norm.
    pub norm_sq: f64,
    /// `‖Φ'x‖² + Σ_j ‖Ψ'_j x‖²` in the weighted norm.
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCertificate {
    pub constant: f64,
    pub trials: Vec<FrameTrial>,
    pub pass: bool,
}

impl FrameCertificate {
    /// Smallest observed `energy / ‖x‖²` over nonzero trials.
    pub fn min_ratio(&self) -> Option<f64> {
        self.trials
            .iter()
            .filter(|t| t.norm_sq > 0.0)
            .map(|t| t.energy / t.norm_sq)
            .reduce(f64::min)
    }
}

/// Certificate on `trials` standard normal signals drawn from `seed`.
pub fn frame_certificate<T: Scalar>(
    g: &Graph<T>,
    scales: &ScaleSequence,
    trials: usize,
    seed: u64,
) -> Result<FrameCertificate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signals: Vec<_> = (0..trials)
        .map(|_| {
            let v = (0..g.n())
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect();
            GraphSignal::from_vec(v)
        })
        .collect();
    certify_signals(g, scales, &signals, DEFAULT_DENSE_CAP)
}

/// Certificate on caller-supplied signals, using explicit dense filter matrices.
pub fn certify_signals<T: Scalar>(
    g: &Graph<T>,
    scales: &ScaleSequence,
    signals: &[GraphSignal<T>],
    dense_cap: usize,
) -> Result<FrameCertificate> {
    let n = g.n();
    if n > dense_cap {
        return Err(Error::GraphTooLarge { n, cap: dense_cap });
    }
    let op = lazy_diffusion(g)?;
    let filters = dense_filters(&op, scales);
    let constant = frame_constant(scales.first(), scales.last());
    let mut pass = true;
    let mut out = Vec::with_capacity(signals.len());
    for x in signals {
        if x.n() != n || x.channels() != 1 {
            return Err(Error::DimensionMismatch(
                "certificate signals must be single-channel on the graph".into(),
            ));
        }
        let norm_sq = weighted_norm_sq(g.degrees(), x)?.to_f64_lossy();
        let mut energy = 0.0;
        for f in &filters {
            let y = GraphSignal::from_vec(dense_matvec(f, n, x.as_slice()));
            energy += weighted_norm_sq(g.degrees(), &y)?.to_f64_lossy();
        }
        let eps = 1e-8 * norm_sq;
        if !(constant * norm_sq - eps <= energy && energy <= norm_sq + eps) {
            pass = false;
        }
        out.push(FrameTrial { norm_sq, energy });
    }
    Ok(FrameCertificate {
        constant,
        trials: out,
        pass,
    })
}

/// Dense `Ψ'_0, …, Ψ'_{J-1}, Φ'_J` from explicit matrix powers.
fn dense_filters<T: Scalar>(op: &DiffusionOperator<T>, scales: &ScaleSequence) -> Vec<Vec<T>> {
    let n = op.n();
    let p = op.dense();
    let mut identity = vec![T::zero(); n * n];
    for i in 0..n {
        identity[i * n + i] = T::one();
    }
    let mut powers = vec![identity.clone()];
    let mut cur = identity;
    let mut step = 0;
    for &t in scales.as_slice() {
        while step < t {
            cur = dense_matmul(&p, &cur, n);
            step += 1;
        }
        powers.push(cur.clone());
    }
    let mut filters: Vec<Vec<T>> = powers
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(&a, &b)| a - b).collect())
        .collect();
    filters.push(powers.pop().expect("nonempty"));
    filters
}

fn dense_matmul<T: Scalar>(a: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn dense_matvec<T: Scalar>(a: &[T], n: usize, x: &[T]) -> Vec<T> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

/// Ascending eigenvalues of the symmetric conjugate `D^{-1/2} P D^{1/2}`.
///
/// Diagnostic only; the certificate itself never uses an eigensolver.
pub fn conjugate_spectrum<T: Scalar>(op: &DiffusionOperator<T>) -> Vec<f64> {
    let n = op.n();
    let p = op.dense();
    let sqrt_d: Vec<f64> = op.degrees().iter().map(|d| d.to_f64_lossy().sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| p[i * n + j].to_f64_lossy() * sqrt_d[j] / sqrt_d[i]);
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    /// Root of 2ξ³ + ξ − 1 by bisection; the stationary point for (t1, tJ) = (1, 2).
    fn cubic_root() -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 2.0 * mid.powi(3) + mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn constant_single_scale_is_half() {
        assert!((frame_constant(1, 1) - 0.5).abs() < 1e-12);
        // substitution s = ξ^t turns every (t, t) case into the same problem
        assert!((frame_constant(3, 3) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_matches_calculus_oracle() {
        let xi = cubic_root();
        let oracle = xi.powi(4) + (1.0 - xi).powi(2);
        assert!((oracle - 0.289_3).abs() < 5e-5, "oracle {oracle}");
        assert!((frame_constant(1, 2) - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_in_unit_interval() {
        for t1 in 1..6 {
            for tj in t1..40 {
                let c = frame_constant(t1, tj);
                assert!(c > 0.0 && c <= 1.0, "C({t1},{tj}) = {c}");
            }
        }
    }

    #[test]
    fn zero_signal_is_within_bounds() {
        let g = build_graph::<f64>(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let s = ScaleSequence::new(vec![1, 2]).unwrap();
        let cert = certify_signals(&g, &s, &[GraphSignal::zeros(3, 1)], DEFAULT_DENSE_CAP).unwrap();
        assert!(cert.pass);
        assert_eq!(cert.trials[0], FrameTrial { norm_sq: 0.0, energy: 0.0 });
    }

    #[test]
    fn alternating_signal_attains_upper_bound() {
        let g = build_graph::<f64>(2, &[(0, 1, 1.0)]).unwrap();
        let s = ScaleSequence::new(vec![1]).unwrap();
        let x = GraphSignal::from_vec(vec![1.0, -1.0]);
        let cert = certify_signals(&g, &s, &[x], DEFAULT_DENSE_CAP).unwrap();
        let t = cert.trials[0];
        assert!(cert.pass);
        assert!((t.energy - t.norm_sq).abs() < 1e-15);
        assert_eq!(t.norm_sq, 2.0);
    }

    #[test]
    fn random_certificate_passes() {
        let edges: Vec<_> = (0..9).map(|i| (i, i + 1, 1.0)).chain([(0, 5, 2.0)]).collect();
        let g = build_graph::<f64>(10, &edges).unwrap();
        let s = ScaleSequence::new(vec![1, 2, 4, 8, 16]).unwrap();
        let cert = frame_certificate(&g, &s, 100, 3).unwrap();
        assert!(cert.pass);
        assert!(cert.min_ratio().unwrap() >= cert.constant - 1e-8);
    }

    #[test]
    fn too_large_is_rejected() {
        let g = build_graph::<f64>(5, &[]).unwrap();
        let s = ScaleSequence::new(vec![1]).unwrap();
        assert!(matches!(
            certify_signals(&g, &s, &[], 4),
            Err(Error::GraphTooLarge { n: 5, cap: 4 })
        ));
    }

    #[test]
    fn spectrum_is_nonnegative() {
        let g = build_graph::<f64>(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap();
        let eig = conjugate_spectrum(&lazy_diffusion(&g).unwrap());
        assert!(eig.iter().all(|&l| (-1e-8..=1.0 + 1e-8).contains(&l)));
        assert!((eig[3] - 1.0).abs() < 1e-12);
    }
}
