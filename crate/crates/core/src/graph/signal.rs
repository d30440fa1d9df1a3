use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Real values on the nodes of a graph, one column per channel.
///
/// Storage is node-major: entry `(i, c)` lives at `i * channels + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSignal<T = f64> {
    n: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> GraphSignal<T> {
    pub fn zeros(n: usize, channels: usize) -> Self {
        Self {
            n,
            channels,
            data: vec![T::zero(); n * channels],
        }
    }

    /// Single-channel signal.
    pub fn from_vec(values: Vec<T>) -> Self {
        Self {
            n: values.len(),
            channels: 1,
            data: values,
        }
    }

    pub fn from_node_major(n: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * channels {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {n} nodes x {channels} channels",
                data.len()
            )));
        }
        Ok(Self { n, channels, data })
    }

    /// Stacks equally long per-channel columns.
    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let channels = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if channels == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch(
                "columns must be nonempty and of equal length".into(),
            ));
        }
        let mut data = Vec::with_capacity(n * channels);
        for i in 0..n {
            data.extend(columns.iter().map(|c| c[i]));
        }
        Ok(Self { n, channels, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, node: usize, channel: usize) -> T {
        self.data[node * self.channels + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, channel)).collect()
    }

    /// Appends the channels of `other` after the channels of `self`.
    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot stack signals on {} and {} nodes",
                self.n, other.n
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.n * channels);
        for i in 0..self.n {
            data.extend_from_slice(&self.data[i * self.channels..(i + 1) * self.channels]);
            data.extend_from_slice(&other.data[i * other.channels..(i + 1) * other.channels]);
        }
        Ok(Self {
            n: self.n,
            channels,
            data,
        })
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let mut out = Self::zeros(self.n, self.channels);
        let c = self.channels;
        for (i, &p) in perm.iter().enumerate() {
            out.data[p * c..(p + 1) * c].copy_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}
