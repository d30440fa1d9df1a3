use super::sparse::CsrMatrix;
use super::{Graph, GraphSignal};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column-stochastic lazy random-walk matrix `P = ½(I + W D⁻¹)`.
///
/// Both `P` and `Pᵀ` are kept in CSR form; the transpose serves the
/// backward pass of diffusion on the tape.
#[derive(Debug, Clone)]
pub struct DiffusionOperator<T = f64> {
    p: CsrMatrix<T>,
    pt: CsrMatrix<T>,
    degrees: Vec<T>,
}

pub fn lazy_diffusion<T: Scalar>(g: &Graph<T>) -> Result<DiffusionOperator<T>> {
    let n = g.n();
    let half = T::lit(0.5);
    let degrees = g.degrees().to_vec();
    if let Some(v) = degrees.iter().position(|&d| !(d > T::zero())) {
        return Err(Error::ZeroDegree(v));
    }
    let mut triplets = Vec::with_capacity(n + 2 * g.edges().len());
    for v in 0..n {
        triplets.push((v, v, half * (T::one() + g.self_loop(v) / degrees[v])));
    }
    for &(i, j, w) in g.edges() {
        // P[i, j] = ½ W[i, j] / d_j
        triplets.push((i, j, half * w / degrees[j]));
        triplets.push((j, i, half * w / degrees[i]));
    }
    let p = CsrMatrix::from_triplets(n, n, &triplets);
    let pt = p.transpose();
    Ok(DiffusionOperator { p, pt, degrees })
}

impl<T: Scalar> DiffusionOperator<T> {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn nnz(&self) -> usize {
        self.p.nnz()
    }

    pub fn degrees(&self) -> &[T] {
        &self.degrees
    }

    pub fn matrix(&self) -> &CsrMatrix<T> {
        &self.p
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.p.get(i, j)
    }

    /// `out = P x` for a node-major block with `channels` columns.
    pub fn apply_into(&self, x: &[T], channels: usize, out: &mut [T]) {
        self.p.mul_into(x, channels, out);
    }

    /// `out = Pᵀ x`.
    pub fn apply_transpose_into(&self, x: &[T], channels: usize, out: &mut [T]) {
        self.pt.mul_into(x, channels, out);
    }

    pub fn apply(&self, x: &GraphSignal<T>) -> GraphSignal<T> {
        let mut out = GraphSignal::zeros(x.n(), x.channels());
        self.apply_into(x.as_slice(), x.channels(), out.as_mut_slice());
        out
    }

    /// `Pᵗ x` by repeated sparse multiplication.
    pub fn apply_power(&self, t: usize, x: &GraphSignal<T>) -> GraphSignal<T> {
        let mut cur = x.clone();
        let mut next = GraphSignal::zeros(x.n(), x.channels());
        for _ in 0..t {
            self.apply_into(cur.as_slice(), x.channels(), next.as_mut_slice());
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn dense(&self) -> Vec<T> {
        self.p.to_dense()
    }

    pub fn column_sums(&self) -> Vec<T> {
        let n = self.n();
        let mut sums = vec![T::zero(); n];
        for r in 0..n {
            for (c, v) in self.p.row(r) {
                sums[c] += v;
            }
        }
        sums
    }
}

/// `‖D^{-1/2} x‖₂` (Frobenius over channels).
pub fn weighted_norm<T: Scalar>(g: &Graph<T>, x: &GraphSignal<T>) -> Result<T> {
    if x.n() != g.n() {
        return Err(Error::DimensionMismatch(format!(
            "signal on {} nodes, graph has {}",
            x.n(),
            g.n()
        )));
    }
    weighted_norm_sq(g.degrees(), x).map(T::sqrt)
}

pub(crate) fn weighted_norm_sq<T: Scalar>(degrees: &[T], x: &GraphSignal<T>) -> Result<T> {
    let mut acc = T::zero();
    for (i, &d) in degrees.iter().enumerate() {
        if !(d > T::zero()) {
            return Err(Error::ZeroDegree(i));
        }
        for c in 0..x.channels() {
            let v = x.get(i, c);
            acc += v * v / d;
        }
    }
    Ok(acc)
}
