mod common;

use std::sync::Arc;

use proptest::prelude::*;

use legs::autodiff::{finite_diff_check, NodeId, Probe, Tape, Tensor};
use legs::graph::lazy_diffusion;

use common::{graph, rng};

/// Builds `op` over fresh parameters of the given shapes, reduces its output
/// with fixed weights and compares the tape gradient with differences.
fn check_primitive(shapes: &[Vec<usize>], values: &[f64], op: impl Fn(&mut Tape, &[NodeId]) -> NodeId) -> f64 {
    let eval = |flat: &[f64]| {
        let mut tape = Tape::new();
        let mut offset = 0;
        let ids: Vec<NodeId> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let len: usize = s.iter().product();
                let t = Tensor::new(s.clone(), flat[offset..offset + len].to_vec());
                offset += len;
                tape.param(format!("p{k}"), t)
            })
            .collect();
        let out = op(&mut tape, &ids);
        let len = tape.value(out).len();
        let weights = (0..len).map(|i| 0.5 + (i as f64 * 0.7).cos()).collect();
        let loss = tape.dot_const(out, weights);
        (tape, loss)
    };
    let (tape, loss) = eval(values);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<f64> = (0..shapes.len())
        .flat_map(|k| grads.get(&format!("p{k}")).unwrap().data().to_vec())
        .collect();
    let report = finite_diff_check(
        |p: &[f64]| {
            let (t, l) = eval(p);
            t.value(l).item()
        },
        values,
        &analytic,
        1e-4,
        Probe::RandomDirections { count: 12, seed: 5 },
    )
    .unwrap();
    assert_eq!(report.excluded, 0, "smooth primitive had excluded probes");
    report.max_rel_error
}

fn entries(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-2.0..2.0f64, len)
}

/// Entries bounded away from zero, for the piecewise primitives.
fn away_from_zero(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((0.1..2.0f64, any::<bool>()).prop_map(|(a, s)| if s { a } else { -a }), len)
}

const TOL: f64 = 1e-6;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows(v in entries(12)) {
        prop_assert!(check_primitive(&[vec![3, 4]], &v, |t, p| t.softmax_rows(p[0])) < TOL);
    }

    #[test]
    fn permute_rows(v in entries(12)) {
        prop_assert!(check_primitive(&[vec![3, 4]], &v, |t, p| t.permute_rows(p[0], vec![2, 0, 1])) < TOL);
    }

    #[test]
    fn filter_weights(v in entries(15)) {
        prop_assert!(check_primitive(&[vec![3, 5]], &v, |t, p| t.filter_weights(p[0])) < TOL);
    }

    #[test]
    fn diffusion_stack(g in graph(2..=12), seed in any::<u64>()) {
        let n = g.n();
        let op = Arc::new(lazy_diffusion(&g).unwrap());
        let v = legs::verify::random_signal(n, 2, &mut rng(seed)).into_vec();
        prop_assert!(check_primitive(&[vec![n, 2]], &v, |t, p| t.diffusion_stack(p[0], Arc::clone(&op), 5)) < TOL);
    }

    #[test]
    fn stack_combine(v in entries(3 * 4 + 4 * 5 * 2)) {
        let e = check_primitive(&[vec![3, 4], vec![4, 5, 2]], &v, |t, p| t.stack_combine(p[0], p[1]));
        prop_assert!(e < TOL);
    }

    #[test]
    fn select(v in entries(24)) {
        prop_assert!(check_primitive(&[vec![3, 4, 2]], &v, |t, p| t.select(p[0], 1)) < TOL);
    }

    #[test]
    fn abs(v in away_from_zero(10)) {
        prop_assert!(check_primitive(&[vec![10]], &v, |t, p| t.abs(p[0])) < TOL);
    }

    #[test]
    fn relu(v in away_from_zero(10)) {
        prop_assert!(check_primitive(&[vec![10]], &v, |t, p| t.relu(p[0])) < TOL);
    }

    #[test]
    fn powi(v in entries(10), q in 1i32..=4) {
        prop_assert!(check_primitive(&[vec![10]], &v, |t, p| t.powi(p[0], q)) < TOL);
    }

    #[test]
    fn scale_add_sub(v in entries(12), c in -3.0..3.0f64) {
        let e = check_primitive(&[vec![2, 3], vec![2, 3]], &v, |t, p| {
            let a = t.scale(p[0], c);
            let b = t.add(a, p[1]);
            t.sub(b, p[0])
        });
        prop_assert!(e < TOL);
    }

    #[test]
    fn reductions(v in entries(24), axis in 0usize..3) {
        prop_assert!(check_primitive(&[vec![2, 3, 4]], &v, |t, p| t.sum_axis(p[0], axis)) < TOL);
        let e = check_primitive(&[vec![2, 3, 4]], &v, |t, p| {
            let s = t.sum(p[0]);
            t.powi(s, 2)
        });
        prop_assert!(e < TOL);
    }

    #[test]
    fn gather_and_stack(v in entries(12)) {
        let e = check_primitive(&[vec![2, 3], vec![6]], &v, |t, p| {
            let g = t.gather(vec![p[0], p[1]], vec![(0, 4), (1, 0), (0, 4), (1, 5)]);
            let h = t.gather(vec![p[1]], vec![(0, 1), (0, 2), (0, 3), (0, 3)]);
            t.stack(vec![g, h])
        });
        prop_assert!(e < TOL);
    }

    #[test]
    fn affine(v in entries(4 * 3 + 3 * 5 + 5)) {
        let e = check_primitive(&[vec![4, 3], vec![3, 5], vec![5]], &v, |t, p| t.affine(p[0], p[1], p[2]));
        prop_assert!(e < TOL);
    }

    #[test]
    fn scale_shift(v in entries(12)) {
        let e = check_primitive(&[vec![4, 3]], &v, |t, p| t.scale_shift(p[0], &[0.3, -1.0, 2.0], vec![1.5, 0.2, -3.0]));
        prop_assert!(e < TOL);
    }

    #[test]
    fn batch_norm(v in entries(6 * 3), gb in entries(6)) {
        let mut all = v.clone();
        all.extend(gb);
        let e = check_primitive(&[vec![6, 3], vec![3], vec![3]], &all, |t, p| t.batch_norm(p[0], p[1], p[2], 1e-5).0);
        prop_assert!(e < TOL);
    }

    #[test]
    fn rbf(v in proptest::collection::vec(-1.0..1.0f64, 4 * 3 + 5 * 3)) {
        prop_assert!(check_primitive(&[vec![4, 3], vec![5, 3]], &v, |t, p| t.rbf(p[0], p[1])) < TOL);
    }

    #[test]
    fn cross_entropy(v in entries(4 * 3), labels in proptest::collection::vec(0usize..3, 4)) {
        let e = check_primitive(&[vec![4, 3]], &v, |t, p| t.softmax_cross_entropy(p[0], labels.clone()));
        prop_assert!(e < TOL);
    }

    #[test]
    fn mse(v in entries(5), y in entries(5)) {
        prop_assert!(check_primitive(&[vec![5]], &v, |t, p| t.mse(p[0], y.clone())) < TOL);
    }
}

/// Random DAG over a parameter and a constant: node `k` combines two earlier
/// nodes picked by `picks`.
fn random_dag(picks: &[(usize, usize, u8)]) -> (Tape, Vec<NodeId>, Vec<Vec<usize>>, Vec<bool>) {
    let mut tape = Tape::new();
    let mut ids = vec![
        tape.param("p", Tensor::vector(vec![0.3, -0.2])),
        tape.constant(Tensor::vector(vec![1.0, 2.0])),
    ];
    let mut parents = vec![Vec::new(), Vec::new()];
    let mut tracked = vec![true, false];
    for &(a, b, kind) in picks {
        let (a, b) = (a % ids.len(), b % ids.len());
        let id = match kind % 3 {
            0 => tape.add(ids[a], ids[b]),
            1 => tape.sub(ids[a], ids[b]),
            _ => tape.scale(ids[a], 0.5),
        };
        let used = if kind % 3 == 2 { vec![a] } else { vec![a, b] };
        tracked.push(used.iter().any(|&u| tracked[u]));
        parents.push(used);
        ids.push(id);
    }
    (tape, ids, parents, tracked)
}

proptest! {
    #[test]
    fn backward_visits_each_contributing_node_once(
        picks in proptest::collection::vec((any::<usize>(), any::<usize>(), any::<u8>()), 1..60),
    ) {
        let (mut tape, ids, parents, tracked) = random_dag(&picks);
        let last = tape.len() - 1;
        // ancestors of the output that carry a parameter dependency
        let mut reaches = vec![false; parents.len()];
        reaches[last] = true;
        for k in (0..parents.len()).rev() {
            if reaches[k] {
                for &p in &parents[k] {
                    reaches[p] = true;
                }
            }
        }
        let expected = (0..parents.len()).filter(|&k| reaches[k] && tracked[k]).count();
        let loss = tape.sum(ids[last]);
        let adj = tape.backward_seeded(loss, Tensor::scalar(1.0));
        let with_loss = usize::from(tracked[last]);
        prop_assert_eq!(adj.visited(), expected + with_loss);
    }
}
