#![allow(dead_code)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use legs::filterbank::ScaleSequence;
use legs::verify::random_graph;
use legs::{Graph, GraphSignal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected weighted graph on `nodes` vertices.
pub fn graph(nodes: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Graph> {
    (nodes, 0.0..0.4f64, any::<u64>()).prop_map(|(n, p, seed)| random_graph(n, p, &mut rng(seed)))
}

/// Strictly increasing steps drawn from `1..=max`.
pub fn scales(max: usize, len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = ScaleSequence> {
    proptest::sample::subsequence((1..=max).collect::<Vec<_>>(), len).prop_map(|t| ScaleSequence::new(t).unwrap())
}

pub fn signal(n: usize, channels: usize) -> impl Strategy<Value = GraphSignal> {
    proptest::collection::vec(-3.0..3.0f64, n * channels)
        .prop_map(move |v| GraphSignal::from_node_major(n, channels, v).unwrap())
}

pub fn graph_and_signal(
    nodes: std::ops::RangeInclusive<usize>,
    channels: usize,
) -> impl Strategy<Value = (Graph, GraphSignal)> {
    graph(nodes).prop_flat_map(move |g| {
        let n = g.n();
        (Just(g), signal(n, channels))
    })
}

pub fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

/// Dense row-major `a · b` for square matrices.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}
