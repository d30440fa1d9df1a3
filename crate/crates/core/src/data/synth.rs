//! Two-class graphs that differ in community structure only.
//!
//! Class 0 joins two dense random communities, one of 6 to 8 nodes and one
//! of 12 to 14 (edge probability 0.7), with one bridge edge. The size gap
//! makes the community mean degrees differ, a contrast that survives many
//! diffusion steps across the bridge. Class 1 is a single connected
//! random graph on the same number of nodes with exactly the same number of
//! edges, so node count, edge count and mean degree match pairwise.
//!
//! Node attributes are the degree and the squared degree. The degree alone
//! is a fixed point of the lazy walk, so every wavelet maps it to zero; the
//! squared degree is not, and its community contrast decays slowly only when
//! the graph has a bridge.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetBundle, GraphLabels};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph, GraphSignal};
use crate::scalar::Scalar;

const SMALL: std::ops::RangeInclusive<usize> = 6..=8;
const LARGE: std::ops::RangeInclusive<usize> = 12..=14;
const DENSITY: f64 = 0.7;

/// `n_graphs` graphs alternating class 0 and class 1.
pub fn synth_scales_dataset<T: Scalar>(n_graphs: usize, seed: u64) -> Result<DatasetBundle<T>> {
    if n_graphs == 0 || n_graphs % 2 == 1 {
        return Err(Error::InvalidConfig(format!("need a positive even graph count, got {n_graphs}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    let mut values = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs / 2 {
        let a = rng.random_range(SMALL);
        let b = rng.random_range(LARGE);
        let mut edges = connected_gnp(a, 0, &mut rng);
        edges.extend(connected_gnp(b, a, &mut rng));
        edges.push((rng.random_range(0..a), a + rng.random_range(0..b)));
        let m = edges.len();
        graphs.push(to_graph(a + b, &edges)?);
        values.push(0);
        graphs.push(to_graph(a + b, &connected_gnm(a + b, m, &mut rng))?);
        values.push(1);
    }
    let node_attributes = graphs
        .iter()
        .map(|g: &Graph<T>| {
            let d = g.degrees().to_vec();
            let d2 = d.iter().map(|&a| a * a).collect();
            GraphSignal::from_columns(&[d, d2])
        })
        .collect::<Result<_>>()?;
    Ok(DatasetBundle {
        name: "SYNTH".into(),
        graphs,
        labels: GraphLabels::Classes {
            values,
            names: vec!["0".into(), "1".into()],
        },
        node_labels: None,
        node_attributes: Some(node_attributes),
    })
}

fn to_graph<T: Scalar>(n: usize, edges: &[(usize, usize)]) -> Result<Graph<T>> {
    let weighted: Vec<(usize, usize, T)> = edges.iter().map(|&(i, j)| (i, j, T::one())).collect();
    build_graph(n, &weighted)
}

/// Connected `G(n, p)` on nodes `offset..offset + n`, by rejection.
fn connected_gnp(n: usize, offset: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(DENSITY) {
                    edges.push((i, j));
                }
            }
        }
        if connected(n, &edges) {
            return edges.into_iter().map(|(i, j)| (i + offset, j + offset)).collect();
        }
    }
}

/// Connected graph with exactly `m` edges drawn uniformly, by rejection.
fn connected_gnm(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    loop {
        let edges: Vec<(usize, usize)> = sample(rng, pairs.len(), m).into_iter().map(|k| pairs[k]).collect();
        if connected(n, &edges) {
            return edges;
        }
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut v: usize) -> usize {
        while p[v] != v {
            p[v] = p[p[v]];
            v = p[v];
        }
        v
    }
    let mut parts = n;
    for &(i, j) in edges {
        let (a, b) = (root(&mut parent, i), root(&mut parent, j));
        if a != b {
            parent[a] = b;
            parts -= 1;
        }
    }
    parts <= 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::eccentricity;

    #[test]
    fn balanced_and_deterministic() {
        let a: DatasetBundle = synth_scales_dataset(100, 7).unwrap();
        let GraphLabels::Classes { values, .. } = &a.labels else { panic!() };
        assert_eq!(values.iter().filter(|&&v| v == 0).count(), 50);
        let b: DatasetBundle = synth_scales_dataset(100, 7).unwrap();
        for (x, y) in a.graphs.iter().zip(&b.graphs) {
            assert_eq!(x.edges(), y.edges());
        }
        assert!(synth_scales_dataset::<f64>(7, 0).is_err());
    }

    #[test]
    fn pairs_match_size_and_mean_degree() {
        let d: DatasetBundle = synth_scales_dataset(40, 3).unwrap();
        for pair in d.graphs.chunks(2) {
            assert_eq!(pair[0].n(), pair[1].n());
            assert_eq!(pair[0].edges().len(), pair[1].edges().len());
        }
        let attrs = d.node_attributes.as_ref().unwrap();
        assert_eq!(attrs[3].channels(), 2);
        for (v, &deg) in d.graphs[3].degrees().iter().enumerate() {
            assert_eq!(attrs[3].get(v, 0), deg);
            assert_eq!(attrs[3].get(v, 1), deg * deg);
        }
    }

    #[test]
    fn split_communities_are_more_eccentric() {
        let d: DatasetBundle = synth_scales_dataset(100, 7).unwrap();
        let GraphLabels::Classes { values, .. } = &d.labels else { panic!() };
        let mut sum = [0.0; 2];
        let mut count = [0.0; 2];
        for (g, &c) in d.graphs.iter().zip(values) {
            let e = eccentricity(g);
            sum[c] += e.sum();
            count[c] += g.n() as f64;
        }
        assert!(sum[0] / count[0] > sum[1] / count[1]);
    }
}
