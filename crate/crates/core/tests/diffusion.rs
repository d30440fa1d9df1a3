mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use legs::graph::{build_graph, lazy_diffusion};
use legs::{Graph, GraphSignal};

use common::{graph, graph_and_signal};

/// Arbitrary simple graph, possibly with isolated vertices.
fn sparse_graph() -> impl Strategy<Value = Graph> {
    (1usize..25).prop_flat_map(|n| {
        proptest::collection::btree_map((0..n, 0..n), 0.1..5.0f64, 0..3 * n).prop_map(move |m| {
            let edges: Vec<_> = m
                .into_iter()
                .filter(|((i, j), _)| i < j)
                .map(|((i, j), w)| (i, j, w))
                .collect();
            build_graph(n, &edges).unwrap()
        })
    })
}

/// `½(I + W D⁻¹)` from the adjacency, isolated vertices carrying a loop.
fn lazy_oracle(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut w = g.adjacency_dense();
    for i in 0..n {
        w[i * n + i] += g.self_loop(i);
    }
    let d: Vec<f64> = (0..n).map(|j| (0..n).map(|i| w[i * n + j]).sum()).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = 0.5 * (f64::from(u8::from(i == j)) + w[i * n + j] / d[j]);
        }
    }
    p
}

fn conjugate(g: &Graph) -> DMatrix<f64> {
    let op = lazy_diffusion(g).unwrap();
    let n = g.n();
    let p = op.dense();
    let d = op.degrees();
    DMatrix::from_fn(n, n, |i, j| p[i * n + j] * d[j].sqrt() / d[i].sqrt())
}

proptest! {
    #[test]
    fn operator_matches_definition(g in sparse_graph()) {
        let op = lazy_diffusion(&g).unwrap();
        for (a, b) in op.dense().iter().zip(lazy_oracle(&g)) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn columns_sum_to_one(g in sparse_graph()) {
        let op = lazy_diffusion(&g).unwrap();
        for s in op.column_sums() {
            prop_assert!((s - 1.0).abs() < 1e-12, "column sum {s}");
        }
        for v in op.dense() {
            prop_assert!(v >= 0.0);
        }
    }

    #[test]
    fn mass_is_conserved((g, x) in graph_and_signal(1..=40, 3)) {
        let op = lazy_diffusion(&g).unwrap();
        let y = op.apply(&x);
        for c in 0..3 {
            let before: f64 = x.column(c).iter().sum();
            let after: f64 = y.column(c).iter().sum();
            let scale: f64 = x.column(c).iter().map(|v| v.abs()).sum();
            prop_assert!((before - after).abs() <= 1e-10 * scale.max(1e-300));
        }
    }

    #[test]
    fn degrees_are_stationary(g in graph(1..=40)) {
        let op = lazy_diffusion(&g).unwrap();
        let d = GraphSignal::from_vec(op.degrees().to_vec());
        let pd = op.apply(&d);
        let peak = op.degrees().iter().fold(0.0f64, |m, v| m.max(*v));
        prop_assert!(pd.max_abs_diff(&d) < 1e-12 * peak);
    }

    #[test]
    fn conjugate_is_symmetric(g in sparse_graph()) {
        let m = conjugate(&g);
        prop_assert!((&m - m.transpose()).amax() < 1e-10);
    }

    #[test]
    fn conjugate_spectrum_lies_in_unit_interval(g in graph(1..=40)) {
        let m = conjugate(&g);
        let sym = (&m + m.transpose()) * 0.5;
        for l in SymmetricEigen::new(sym).eigenvalues.iter() {
            prop_assert!((-1e-8..=1.0 + 1e-8).contains(l), "eigenvalue {l}");
        }
    }
}
