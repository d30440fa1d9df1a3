//! Weighted undirected graphs and the lazy random-walk diffusion operator.

mod diffusion;
mod features;
mod signal;
pub mod sparse;

pub use diffusion::{lazy_diffusion, weighted_norm, DiffusionOperator};
pub(crate) use diffusion::weighted_norm_sq;
pub use features::{clustering_coefficient, eccentricity, structural_features};
pub use signal::GraphSignal;

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What to do with nodes that have no incident edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IsolatedNodes {
    /// Give each isolated node a unit self-loop so every degree is positive.
    #[default]
    SelfLoop,
    /// Leave zero degrees in place; diffusion will refuse such graphs.
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T = f64> {
    n: usize,
    /// Canonical `(i, j, w)` with `i < j`, in insertion order.
    edges: Vec<(usize, usize, T)>,
    /// Sorted adjacency lists, self-loops excluded.
    neighbors: Vec<Vec<(usize, T)>>,
    /// Weight of the self-loop added for isolated nodes (zero elsewhere).
    loops: Vec<T>,
    degrees: Vec<T>,
    isolated: IsolatedNodes,
}

/// Builds a graph from undirected edges, adding unit self-loops to isolated nodes.
pub fn build_graph<T: Scalar>(n: usize, edges: &[(usize, usize, T)]) -> Result<Graph<T>> {
    build_graph_with(n, edges, IsolatedNodes::SelfLoop)
}

pub fn build_graph_with<T: Scalar>(
    n: usize,
    edges: &[(usize, usize, T)],
    isolated: IsolatedNodes,
) -> Result<Graph<T>> {
    let mut seen = HashSet::with_capacity(edges.len());
    let mut canonical = Vec::with_capacity(edges.len());
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j, w) in edges {
        for index in [i, j] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        if !(w > T::zero()) || !w.is_finite() {
            return Err(Error::NonPositiveWeight {
                i,
                j,
                weight: w.to_f64_lossy(),
            });
        }
        let key = (i.min(j), i.max(j));
        if !seen.insert(key) {
            return Err(Error::DuplicateEdge(i, j));
        }
        canonical.push((key.0, key.1, w));
        neighbors[i].push((j, w));
        neighbors[j].push((i, w));
    }
    for list in &mut neighbors {
        list.sort_by_key(|&(j, _)| j);
    }
    let mut loops = vec![T::zero(); n];
    let mut degrees: Vec<T> = neighbors
        .iter()
        .map(|list| list.iter().map(|&(_, w)| w).sum())
        .collect();
    if isolated == IsolatedNodes::SelfLoop {
        for v in 0..n {
            if neighbors[v].is_empty() {
                loops[v] = T::one();
                degrees[v] = T::one();
            }
        }
    }
    Ok(Graph {
        n,
        edges: canonical,
        neighbors,
        loops,
        degrees,
        isolated,
    })
}

impl<T: Scalar> Graph<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize, T)] {
        &self.edges
    }

    pub fn degrees(&self) -> &[T] {
        &self.degrees
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, T)] {
        &self.neighbors[v]
    }

    /// Weight of the laziness self-loop at `v` (zero unless `v` was isolated).
    pub fn self_loop(&self, v: usize) -> T {
        self.loops[v]
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.neighbors[i]
            .binary_search_by_key(&j, |&(k, _)| k)
            .map(|pos| self.neighbors[i][pos].1)
            .unwrap_or_else(|_| T::zero())
    }

    /// Dense row-major adjacency W (self-loops excluded).
    pub fn adjacency_dense(&self) -> Vec<T> {
        let mut w = vec![T::zero(); self.n * self.n];
        for &(i, j, v) in &self.edges {
            w[i * self.n + j] = v;
            w[j * self.n + i] = v;
        }
        w
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph<T> {
        assert_eq!(perm.len(), self.n);
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j, w)| (perm[i], perm[j], w))
            .collect();
        build_graph_with(self.n, &edges, self.isolated).expect("relabeling preserves validity")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_adjacency_and_degrees() {
        let g = build_graph(2, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(g.adjacency_dense(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(g.degrees(), &[1.0, 1.0]);
    }

    #[test]
    fn path_degrees() {
        let g = build_graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert_eq!(g.degrees(), &[1.0, 2.0, 1.0]);
    }

    #[test]
    fn rejects_reversed_duplicate() {
        let err = build_graph(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateEdge(1, 0)));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            build_graph(2, &[(0, 2, 1.0)]),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
        assert!(matches!(
            build_graph(2, &[(0, 1, 0.0)]),
            Err(Error::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            build_graph(2, &[(0, 1, -2.0)]),
            Err(Error::NonPositiveWeight { .. })
        ));
        assert!(matches!(build_graph(2, &[(1, 1, 1.0)]), Err(Error::SelfLoop(1))));
    }

    #[test]
    fn isolated_nodes_get_unit_loop() {
        let g = build_graph(3, &[(0, 1, 2.0)]).unwrap();
        assert_eq!(g.degrees(), &[2.0, 2.0, 1.0]);
        assert_eq!(g.self_loop(2), 1.0);
        assert_eq!(g.self_loop(0), 0.0);
        // W itself keeps a zero diagonal.
        assert!(g.adjacency_dense().iter().step_by(4).all(|&d| d == 0.0));

        let raw = build_graph_with(3, &[(0, 1, 2.0)], IsolatedNodes::Keep).unwrap();
        assert_eq!(raw.degrees()[2], 0.0);
    }

    #[test]
    fn permutation_relabels_edges() {
        let g = build_graph(3, &[(0, 1, 1.0), (1, 2, 3.0)]).unwrap();
        let h = g.permuted(&[2, 0, 1]);
        assert_eq!(h.weight(2, 0), 1.0);
        assert_eq!(h.weight(0, 1), 3.0);
        assert_eq!(h.degrees(), &[4.0, 3.0, 1.0]);
    }
}
