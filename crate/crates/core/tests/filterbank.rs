mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;

use legs::filterbank::{build_bank, dyadic_scales, frame_certificate, frame_constant, ScaleSequence};
use legs::graph::{build_graph, lazy_diffusion, weighted_norm};
use legs::{Graph, GraphSignal};

use common::{graph, graph_and_signal, identity, matmul, scales};

/// Adds the triangle 0-1-2 so the graph is not bipartite.
fn with_triangle(g: &Graph) -> Graph {
    let mut edges: BTreeMap<(usize, usize), f64> = g.edges().iter().map(|&(i, j, w)| ((i, j), w)).collect();
    for key in [(0, 1), (1, 2), (0, 2)] {
        edges.entry(key).or_insert(1.0);
    }
    let list: Vec<_> = edges.into_iter().map(|((i, j), w)| (i, j, w)).collect();
    build_graph(g.n(), &list).unwrap()
}

fn add(total: &mut GraphSignal, y: &GraphSignal) {
    for (t, v) in total.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *t += v;
    }
}

fn mass_distribution(x: &GraphSignal) -> Vec<f64> {
    let total = x.sum();
    x.as_slice().iter().map(|v| v / total).collect()
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

proptest! {
    #[test]
    fn filters_telescope((g, x) in graph_and_signal(2..=50, 2), t in scales(32, 1..=6)) {
        let bank = build_bank(Arc::new(lazy_diffusion(&g).unwrap()), t);
        let mut total = GraphSignal::zeros(g.n(), 2);
        for y in bank.apply_all(&x).unwrap() {
            add(&mut total, &y);
        }
        prop_assert!(total.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn energy_lies_within_frame_bounds((g, x) in graph_and_signal(2..=30, 1), t in scales(32, 1..=6)) {
        let c = frame_constant(t.first(), t.last());
        prop_assert!(c > 0.0 && c <= 1.0);
        let bank = build_bank(Arc::new(lazy_diffusion(&g).unwrap()), t);
        let norm_sq = weighted_norm(&g, &x).unwrap().powi(2);
        let energy: f64 = bank
            .apply_all(&x)
            .unwrap()
            .iter()
            .map(|y| weighted_norm(&g, y).unwrap().powi(2))
            .sum();
        prop_assert!(energy <= norm_sq * (1.0 + 1e-9), "{energy} > {norm_sq}");
        prop_assert!(energy >= c * norm_sq * (1.0 - 1e-9), "{energy} < {c} * {norm_sq}");
    }

    #[test]
    fn certificates_pass(g in graph(2..=30), t in scales(32, 1..=6), seed in any::<u64>()) {
        let cert = frame_certificate(&g, &t, 2, seed).unwrap();
        prop_assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn low_pass_keeps_approaching_stationarity(
        (g, x) in graph(3..=30).prop_flat_map(|g| {
            let n = g.n();
            (Just(with_triangle(&g)), proptest::collection::vec(0.01..1.0f64, n).prop_map(GraphSignal::from_vec))
        }),
        top in 1usize..=16,
    ) {
        let op = Arc::new(lazy_diffusion(&g).unwrap());
        let low_pass = |t: usize| {
            let bank = build_bank(Arc::clone(&op), ScaleSequence::new(vec![t]).unwrap());
            mass_distribution(&bank.apply_filter(1, &x).unwrap())
        };
        let stationary = mass_distribution(&GraphSignal::from_vec(op.degrees().to_vec()));
        let lows: Vec<Vec<f64>> = (0..5).map(|k| low_pass(top << k)).collect();
        for k in 0..4 {
            let now = total_variation(&lows[k], &stationary);
            let next = total_variation(&lows[k + 1], &stationary);
            prop_assert!(next <= now + 1e-9);
        }
    }

    #[test]
    fn dyadic_bank_matches_powers(g in graph(1..=25), j in 1u32..=4) {
        let n = g.n();
        let op = Arc::new(lazy_diffusion(&g).unwrap());
        let p = op.dense();
        let mut powers = vec![identity(n), p.clone()];
        for k in 1..=j {
            let last = powers.last().unwrap().clone();
            powers.push(matmul(&last, &last, n));
            prop_assert_eq!(powers.len(), k as usize + 2);
        }
        // powers[k + 1] = P^(2^k)
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let mut expected = vec![sub(&powers[0], &powers[1])];
        for k in 1..=j as usize {
            expected.push(sub(&powers[k], &powers[k + 1]));
        }
        expected.push(powers[j as usize + 1].clone());

        let bank = build_bank(op, dyadic_scales(j, 16).unwrap());
        let basis = GraphSignal::from_node_major(n, n, identity(n)).unwrap();
        for (f, want) in expected.iter().enumerate() {
            let got = bank.apply_filter(f, &basis).unwrap();
            for (a, b) in got.as_slice().iter().zip(want) {
                prop_assert!((a - b).abs() < 1e-12, "filter {f}: {a} vs {b}");
            }
        }
    }
}
