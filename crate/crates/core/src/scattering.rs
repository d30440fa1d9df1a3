//! Fixed geometric scattering: wavelet cascades with absolute values and
//! graph-level moment aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::FilterBank;
use crate::graph::GraphSignal;
use crate::scalar::Scalar;

/// Wavelet indices `(j_1, …, j_m)` of a cascade; the empty path is the identity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ScatterPath(pub Vec<usize>);

impl ScatterPath {
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for ScatterPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner: Vec<String> = self.0.iter().map(usize::to_string).collect();
        write!(f, "({})", inner.join(","))
    }
}

/// Which deeper cascades are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PathSet {
    /// Strictly increasing wavelet indices along the path.
    #[default]
    Increasing,
    /// Every index sequence.
    AllOrdered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterConfig {
    /// Number of wavelets `J` in the bank.
    pub num_wavelets: usize,
    pub max_order: usize,
    pub q_list: Vec<u32>,
    pub include_lowpass: bool,
    pub path_set: PathSet,
    /// Divide moment sums by the node count.
    pub normalize_moments: bool,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            num_wavelets: 5,
            max_order: 2,
            q_list: vec![1, 2, 3, 4],
            include_lowpass: true,
            path_set: PathSet::Increasing,
            normalize_moments: false,
        }
    }
}

impl ScatterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_wavelets == 0 {
            return Err(Error::InvalidConfig("need at least one wavelet".into()));
        }
        if self.q_list.is_empty() || self.q_list.contains(&0) {
            return Err(Error::InvalidConfig(
                "moment orders must be a nonempty list of positive integers".into(),
            ));
        }
        Ok(())
    }

    pub fn paths(&self) -> Vec<ScatterPath> {
        enumerate_paths(self)
    }

    /// Descriptors of every feature, in output order.
    pub fn feature_index(&self, channels: usize) -> Vec<FeatureKey> {
        let mut kinds: Vec<FeaturePath> = self.paths().into_iter().map(FeaturePath::Cascade).collect();
        if self.include_lowpass {
            kinds.push(FeaturePath::LowPass);
        }
        let mut keys = Vec::with_capacity(channels * kinds.len() * self.q_list.len());
        for channel in 0..channels {
            for path in &kinds {
                for &q in &self.q_list {
                    keys.push(FeatureKey {
                        channel,
                        path: path.clone(),
                        q,
                    });
                }
            }
        }
        keys
    }
}

/// Order 0, then all order-1 paths, then order 2 and deeper, lexicographic within an order.
pub fn enumerate_paths(cfg: &ScatterConfig) -> Vec<ScatterPath> {
    let j = cfg.num_wavelets;
    let mut out = vec![ScatterPath(Vec::new())];
    let mut frontier = vec![Vec::<usize>::new()];
    for _ in 0..cfg.max_order {
        let mut next = Vec::new();
        for prefix in &frontier {
            let start = match (cfg.path_set, prefix.last()) {
                (PathSet::Increasing, Some(&last)) => last + 1,
                _ => 0,
            };
            for idx in start..j {
                let mut p = prefix.clone();
                p.push(idx);
                next.push(p);
            }
        }
        out.extend(next.iter().cloned().map(ScatterPath));
        frontier = next;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeaturePath {
    Cascade(ScatterPath),
    /// Moments of `Φ'_J x`.
    LowPass,
}

impl fmt::Display for FeaturePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturePath::Cascade(p) => p.fmt(f),
            FeaturePath::LowPass => f.write_str("(lowpass)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub channel: usize,
    pub path: FeaturePath,
    pub q: u32,
}

impl FeatureKey {
    /// Column label `<channel>|p=(…)|q=<k>`.
    pub fn label(&self, channel_name: &str) -> String {
        format!("{channel_name}|p={}|q={}", self.path, self.q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T = f64> {
    pub values: Vec<T>,
    pub index: Vec<FeatureKey>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest `|a − b| / max(1, |a|, |b|)` over entries.
    pub fn max_rel_diff(&self, other: &Self) -> T {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs() / T::one().max(a.abs()).max(b.abs()))
            .fold(T::zero(), T::max)
    }
}

/// Node-level cascade `Ψ_{j_m}|… |Ψ_{j_1} x| …|`.
pub fn scatter_node<T: Scalar>(
    bank: &FilterBank<T>,
    path: &ScatterPath,
    x: &GraphSignal<T>,
) -> Result<GraphSignal<T>> {
    let mut cur = x.clone();
    for (k, &j) in path.indices().iter().enumerate() {
        if j >= bank.num_wavelets() {
            return Err(Error::BadFilterIndex {
                index: j,
                count: bank.num_wavelets(),
            });
        }
        if k > 0 {
            abs_in_place(&mut cur);
        }
        cur = bank.apply_filter(j, &cur)?;
    }
    Ok(cur)
}

/// `Σ_i |u_i|^q` over every entry of `u`.
pub fn scatter_moment<T: Scalar>(u: &GraphSignal<T>, q: u32) -> T {
    u.as_slice().iter().map(|v| v.abs().powi(q as i32)).sum()
}

fn channel_moment<T: Scalar>(u: &GraphSignal<T>, channel: usize, q: u32) -> T {
    (0..u.n()).map(|i| u.get(i, channel).abs().powi(q as i32)).sum()
}

fn abs_in_place<T: Scalar>(x: &mut GraphSignal<T>) {
    x.as_mut_slice().iter_mut().for_each(|v| *v = v.abs());
}

/// Graph-level features of every channel of `x`.
pub fn scatter_features<T: Scalar>(
    bank: &FilterBank<T>,
    x: &GraphSignal<T>,
    cfg: &ScatterConfig,
) -> Result<FeatureVector<T>> {
    cfg.validate()?;
    if cfg.num_wavelets != bank.num_wavelets() {
        return Err(Error::DimensionMismatch(format!(
            "config expects {} wavelets, bank has {}",
            cfg.num_wavelets,
            bank.num_wavelets()
        )));
    }
    let paths = cfg.paths();
    // Responses of every path, computed breadth-first so each prefix is
    // diffused once per child level.
    let mut responses: BTreeMap<Vec<usize>, GraphSignal<T>> = BTreeMap::new();
    responses.insert(Vec::new(), x.clone());
    let first = bank.apply_all(x)?;
    let lowpass = first[bank.num_wavelets()].clone();
    let mut by_prefix: BTreeMap<Vec<usize>, Vec<GraphSignal<T>>> = BTreeMap::new();
    by_prefix.insert(Vec::new(), first);
    for path in paths.iter().filter(|p| p.order() > 0) {
        let (prefix, last) = path.indices().split_at(path.order() - 1);
        if !by_prefix.contains_key(prefix) {
            let mut u = responses[prefix].clone();
            abs_in_place(&mut u);
            by_prefix.insert(prefix.to_vec(), bank.apply_all(&u)?);
        }
        let resp = by_prefix[prefix][last[0]].clone();
        responses.insert(path.indices().to_vec(), resp);
    }

    let index = cfg.feature_index(x.channels());
    let scale = if cfg.normalize_moments && x.n() > 0 {
        T::one() / T::from_usize_lossy(x.n())
    } else {
        T::one()
    };
    let values = index
        .iter()
        .map(|key| {
            let u = match &key.path {
                FeaturePath::Cascade(p) => &responses[p.indices()],
                FeaturePath::LowPass => &lowpass,
            };
            channel_moment(u, key.channel, key.q) * scale
        })
        .collect();
    Ok(FeatureVector { values, index })
}
