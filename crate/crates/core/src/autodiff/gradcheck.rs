//! Central-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One-sided slopes disagreeing by more than this fraction flag a kink.
const KINK_RATIO: f64 = 0.5;
const KINK_FLOOR: f64 = 1e-6;
/// For smooth functions the one-sided gap halves with the step; a kink
/// inside the step breaks that scaling.
const SCALING_SLACK: f64 = 0.25;
const ROUNDOFF_FACTOR: f64 = 64.0;
/// A rejected stencil is retried with the step divided by this, down to
/// `MIN_STEP`.
const SHRINK: f64 = 4.0;
const MIN_STEP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// Every coordinate separately.
    Coordinates,
    /// Directional derivatives along random unit directions.
    RandomDirections { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes skipped because the function is not differentiable there.
    pub excluded: usize,
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// The numeric slope is the Richardson combination of central differences
/// at `eps` and `eps / 2`, which cancels their leading truncation term.
/// Relative error per probe is `|a − n| / (|a| + |n| + 1e-12)`. A probe is
/// excluded when its one-sided slopes disagree outright (an absolute value
/// sitting at zero) or when their gap fails to halve with the step (a kink
/// within `eps` of the point). A rejected probe is retried at smaller steps
/// before it counts as excluded. Neither test looks at `analytic`.
pub fn finite_diff_check<T, F>(
    mut f: F,
    point: &[T],
    analytic: &[T],
    eps: f64,
    probe: Probe,
) -> Result<FdReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
{
    run_check(|p| (f(p), ()), point, analytic, eps, probe, |st, _| {
        let fwd = (st.plus - st.f0) / st.step;
        let bwd = (st.f0 - st.minus) / st.step;
        let gap = fwd - bwd;
        let half_gap = 2.0 * (st.half_plus - st.f0) / st.step - 2.0 * (st.f0 - st.half_minus) / st.step;
        let roundoff = ROUNDOFF_FACTOR * f64::EPSILON * (st.f0.abs() + 1.0) / st.step;
        let at_kink = gap.abs() > KINK_RATIO * fwd.abs().max(bwd.abs()) + KINK_FLOOR;
        let kink_in_step = (gap - 2.0 * half_gap).abs() > SCALING_SLACK * gap.abs() + roundoff;
        at_kink || kink_in_step
    })
}

/// Like [`finite_diff_check`] for a piecewise-smooth `f` that also reports
/// which piece its argument falls in. A stencil is rejected exactly when
/// some of its points leave the piece containing `point`.
pub fn piecewise_diff_check<T, R, F>(
    f: F,
    point: &[T],
    analytic: &[T],
    eps: f64,
    probe: Probe,
) -> Result<FdReport>
where
    T: Scalar,
    R: PartialEq,
    F: FnMut(&[T]) -> (T, R),
{
    run_check(f, point, analytic, eps, probe, |_, pieces: [bool; 4]| pieces.contains(&false))
}

struct Stencil {
    f0: f64,
    plus: f64,
    minus: f64,
    half_plus: f64,
    half_minus: f64,
    step: f64,
}

fn run_check<T, R, F, X>(
    mut f: F,
    point: &[T],
    analytic: &[T],
    eps: f64,
    probe: Probe,
    exclude: X,
) -> Result<FdReport>
where
    T: Scalar,
    R: PartialEq,
    F: FnMut(&[T]) -> (T, R),
    X: Fn(&Stencil, [bool; 4]) -> bool,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!("step {eps} outside [1e-7, 1e-4]")));
    }
    if point.len() != analytic.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} coordinates but {} gradient entries",
            point.len(),
            analytic.len()
        )));
    }
    let (v0, piece0) = f(point);
    let f0 = v0.to_f64_lossy();
    let mut shifted = point.to_vec();
    let mut eval = |dir: &[f64], step: f64, f: &mut F| {
        for ((s, &p), &d) in shifted.iter_mut().zip(point).zip(dir) {
            *s = p + T::lit(step * d);
        }
        let (v, piece) = f(&shifted);
        (v.to_f64_lossy(), piece == piece0)
    };
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for dir in &directions(point.len(), probe) {
        let mut numeric = None;
        let mut step = eps;
        while step >= MIN_STEP {
            let (plus, p1) = eval(dir, step, &mut f);
            let (minus, p2) = eval(dir, -step, &mut f);
            let (half_plus, p3) = eval(dir, step / 2.0, &mut f);
            let (half_minus, p4) = eval(dir, -step / 2.0, &mut f);
            let st = Stencil {
                step,
                f0,
                plus,
                minus,
                half_plus,
                half_minus,
            };
            if !exclude(&st, [p1, p2, p3, p4]) {
                numeric = Some((4.0 * (half_plus - half_minus) / step - (plus - minus) / (2.0 * step)) / 3.0);
                break;
            }
            step /= SHRINK;
        }
        let Some(numeric) = numeric else {
            report.excluded += 1;
            continue;
        };
        let a: f64 = analytic
            .iter()
            .zip(dir)
            .map(|(&g, &d)| g.to_f64_lossy() * d)
            .sum();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

fn directions(n: usize, probe: Probe) -> Vec<Vec<f64>> {
    match probe {
        Probe::Coordinates => (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect(),
        Probe::RandomDirections { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
                    v.into_iter().map(|a| a / norm).collect()
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let c = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let r = finite_diff_check(f, &[0.3, 0.1, -4.0], &c, 1e-5, Probe::Coordinates).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn kink_at_zero_is_excluded() {
        let f = |x: &[f64]| x[0].abs() + x[1] * x[1];
        let r = finite_diff_check(f, &[0.0, 1.0], &[0.0, 2.0], 1e-5, Probe::Coordinates).unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 1);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let f = |x: &[f64]| x[0] * x[0];
        let r = finite_diff_check(f, &[1.0], &[3.0], 1e-5, Probe::Coordinates).unwrap();
        assert!(r.max_rel_error > 0.1);
        let dirs = Probe::RandomDirections { count: 4, seed: 1 };
        let g = |x: &[f64]| x[0] * x[1];
        let r = finite_diff_check(g, &[2.0, 3.0], &[3.0, 2.0], 1e-5, dirs).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn step_range_is_enforced() {
        let f = |x: &[f64]| x[0];
        assert!(finite_diff_check(f, &[0.0], &[1.0], 1e-3, Probe::Coordinates).is_err());
        assert!(finite_diff_check(f, &[0.0], &[1.0], 1e-8, Probe::Coordinates).is_err());
    }

    #[test]
    fn piece_changes_are_excluded() {
        let f = |x: &[f64]| (x[0].abs() + x[1] * x[1], x[0] > 0.0);
        let r = piecewise_diff_check(f, &[3e-8, 1.0], &[1.0, 2.0], 1e-5, Probe::Coordinates).unwrap();
        assert_eq!((r.checked, r.excluded), (1, 1));
        assert!(r.max_rel_error < 1e-8);
        // a smaller step clears the kink
        let r = piecewise_diff_check(f, &[3e-6, 1.0], &[1.0, 2.0], 1e-5, Probe::Coordinates).unwrap();
        assert_eq!((r.checked, r.excluded), (2, 0));
        let r = piecewise_diff_check(f, &[0.5, 1.0], &[1.0, 2.5], 1e-5, Probe::Coordinates).unwrap();
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error > 0.05);
    }
}
