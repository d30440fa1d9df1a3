use std::sync::Arc;

use super::ScaleSequence;
use crate::error::{Error, Result};
use crate::graph::{DiffusionOperator, GraphSignal};
use crate::scalar::Scalar;

/// Matrix-free filter bank. Filters `0..J` are wavelets, filter `J` is the low-pass.
#[derive(Debug, Clone)]
pub struct FilterBank<T = f64> {
    op: Arc<DiffusionOperator<T>>,
    scales: ScaleSequence,
}

pub fn build_bank<T: Scalar>(op: Arc<DiffusionOperator<T>>, scales: ScaleSequence) -> FilterBank<T> {
    FilterBank { op, scales }
}

impl<T: Scalar> FilterBank<T> {
    pub fn operator(&self) -> &Arc<DiffusionOperator<T>> {
        &self.op
    }

    pub fn scales(&self) -> &ScaleSequence {
        &self.scales
    }

    pub fn num_wavelets(&self) -> usize {
        self.scales.len()
    }

    /// Wavelets plus the low-pass.
    pub fn num_filters(&self) -> usize {
        self.scales.len() + 1
    }

    /// Response of filter `j` (index `J` is `Φ'_J`).
    pub fn apply_filter(&self, j: usize, x: &GraphSignal<T>) -> Result<GraphSignal<T>> {
        let count = self.num_filters();
        if j >= count {
            return Err(Error::BadFilterIndex { index: j, count });
        }
        self.check_signal(x)?;
        let t = self.scales.as_slice();
        let jj = self.num_wavelets();
        let out = if j == jj {
            self.op.apply_power(t[jj - 1], x)
        } else {
            let (lo, hi_t) = if j == 0 {
                (x.clone(), t[0])
            } else {
                (self.op.apply_power(t[j - 1], x), t[j])
            };
            let hi = self.op.apply_power(hi_t - if j == 0 { 0 } else { t[j - 1] }, &lo);
            sub(&lo, &hi)
        };
        Ok(out)
    }

    /// All `J + 1` responses, sharing one pass of diffusion up to `t_J`.
    pub fn apply_all(&self, x: &GraphSignal<T>) -> Result<Vec<GraphSignal<T>>> {
        self.check_signal(x)?;
        let t = self.scales.as_slice();
        let mut powers = Vec::with_capacity(t.len() + 1);
        powers.push(x.clone());
        let mut cur = x.clone();
        let mut next = GraphSignal::zeros(x.n(), x.channels());
        let mut step = 0;
        for &target in t {
            while step < target {
                self.op.apply_into(cur.as_slice(), x.channels(), next.as_mut_slice());
                std::mem::swap(&mut cur, &mut next);
                step += 1;
            }
            powers.push(cur.clone());
        }
        let mut out: Vec<_> = powers.windows(2).map(|w| sub(&w[0], &w[1])).collect();
        out.push(powers.pop().expect("at least one scale"));
        Ok(out)
    }

    fn check_signal(&self, x: &GraphSignal<T>) -> Result<()> {
        if x.n() != self.op.n() {
            return Err(Error::DimensionMismatch(format!(
                "signal on {} nodes, operator on {}",
                x.n(),
                self.op.n()
            )));
        }
        Ok(())
    }
}

fn sub<T: Scalar>(a: &GraphSignal<T>, b: &GraphSignal<T>) -> GraphSignal<T> {
    let mut out = a.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o -= v;
    }
    out
}
