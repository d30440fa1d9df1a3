//! Structural node features: eccentricity and local clustering.

use std::collections::VecDeque;

use super::{Graph, GraphSignal};
use crate::scalar::Scalar;

/// Hop eccentricity of every node within its connected component.
pub fn eccentricity<T: Scalar>(g: &Graph<T>) -> GraphSignal<T> {
    let n = g.n();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let values = (0..n)
        .map(|src| {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[src] = 0;
            queue.clear();
            queue.push_back(src);
            let mut far = 0;
            while let Some(v) = queue.pop_front() {
                far = far.max(dist[v]);
                for &(u, _) in g.neighbors(v) {
                    if dist[u] == usize::MAX {
                        dist[u] = dist[v] + 1;
                        queue.push_back(u);
                    }
                }
            }
            T::from_usize_lossy(far)
        })
        .collect();
    GraphSignal::from_vec(values)
}

/// Fraction of neighbor pairs that are themselves adjacent; zero below two neighbors.
pub fn clustering_coefficient<T: Scalar>(g: &Graph<T>) -> GraphSignal<T> {
    let values = (0..g.n())
        .map(|v| {
            let nbrs = g.neighbors(v);
            let k = nbrs.len();
            if k < 2 {
                return T::zero();
            }
            let mut links = 0usize;
            for (a, &(u, _)) in nbrs.iter().enumerate() {
                for &(w, _) in &nbrs[a + 1..] {
                    if g.weight(u, w) > T::zero() {
                        links += 1;
                    }
                }
            }
            T::from_usize_lossy(2 * links) / T::from_usize_lossy(k * (k - 1))
        })
        .collect();
    GraphSignal::from_vec(values)
}

/// The two-channel `[eccentricity, clustering]` input used for classification.
pub fn structural_features<T: Scalar>(g: &Graph<T>) -> GraphSignal<T> {
    eccentricity(g)
        .hstack(&clustering_coefficient(g))
        .expect("both features live on the same nodes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;

    fn path3() -> Graph<f64> {
        build_graph::<f64>(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn triangle() -> Graph<f64> {
        build_graph::<f64>(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    #[test]
    fn eccentricity_examples() {
        assert_eq!(eccentricity(&path3()).into_vec(), vec![2.0, 1.0, 2.0]);
        assert_eq!(eccentricity(&build_graph::<f64>(1, &[]).unwrap()).into_vec(), vec![0.0]);
        assert_eq!(eccentricity(&triangle()).into_vec(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn eccentricity_per_component() {
        // path 0-1-2 plus separate edge 3-4
        let g = build_graph::<f64>(5, &[(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0)]).unwrap();
        assert_eq!(eccentricity(&g).into_vec(), vec![2.0, 1.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(clustering_coefficient(&triangle()).into_vec(), vec![1.0; 3]);
        assert_eq!(clustering_coefficient(&path3()).into_vec(), vec![0.0; 3]);
        // K4 minus edge (2,3): nodes 0 and 1 see all three others.
        let g = build_graph::<f64>(
            4,
            &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 2, 1.0), (1, 3, 1.0)],
        )
        .unwrap();
        let c = clustering_coefficient(&g).into_vec();
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((c[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[2], 1.0);
    }

    #[test]
    fn structural_has_two_channels() {
        let s = structural_features(&path3());
        assert_eq!(s.channels(), 2);
        assert_eq!(s.column(0), vec![2.0, 1.0, 2.0]);
    }
}
