use std::fs;

use proptest::prelude::*;

use legs::data::{parse_tudataset, write_tudataset, GraphLabels};
use legs::graph::build_graph;
use legs::{DatasetBundle, Error, Graph};

fn unit_graph() -> impl Strategy<Value = Graph> {
    (1usize..12).prop_flat_map(|n| {
        proptest::collection::btree_set((0..n, 0..n), 0..2 * n).prop_map(move |pairs| {
            let edges: Vec<_> = pairs.into_iter().filter(|(i, j)| i < j).map(|(i, j)| (i, j, 1.0)).collect();
            build_graph(n, &edges).unwrap()
        })
    })
}

fn bundle() -> impl Strategy<Value = DatasetBundle> {
    proptest::collection::vec((unit_graph(), -3i64..3), 1..15).prop_map(|items| {
        let mut names: Vec<i64> = items.iter().map(|(_, y)| *y).collect();
        names.sort_unstable();
        names.dedup();
        let values = items.iter().map(|(_, y)| names.binary_search(y).unwrap()).collect();
        DatasetBundle {
            name: "P".into(),
            graphs: items.into_iter().map(|(g, _)| g).collect(),
            labels: GraphLabels::Classes {
                values,
                names: names.iter().map(i64::to_string).collect(),
            },
            node_labels: None,
            node_attributes: None,
        }
    })
}

proptest! {
    #[test]
    fn written_datasets_parse_back(b in bundle()) {
        let dir = tempfile::tempdir().unwrap();
        write_tudataset(&b, dir.path()).unwrap();
        let back: DatasetBundle = parse_tudataset(dir.path()).unwrap();
        prop_assert_eq!(back.graphs.len(), b.graphs.len());
        for (g, h) in b.graphs.iter().zip(&back.graphs) {
            prop_assert_eq!(g.n(), h.n());
            let mut a = g.edges().to_vec();
            let mut c = h.edges().to_vec();
            a.sort_by(|x, y| x.partial_cmp(y).unwrap());
            c.sort_by(|x, y| x.partial_cmp(y).unwrap());
            prop_assert_eq!(a, c);
        }
        prop_assert_eq!(back.labels, b.labels);
    }

    #[test]
    fn corrupted_edge_lines_are_reported(
        b in bundle().prop_filter("needs edges", |b| b.graphs.iter().any(|g| !g.edges().is_empty())),
        pick in any::<prop::sample::Index>(),
        junk in prop::sample::select(vec!["a, b", "1;2", "", "1,", "-1, 2", "1.5, 2"]),
    ) {
        let dir = tempfile::tempdir().unwrap();
        write_tudataset(&b, dir.path()).unwrap();
        let path = dir.path().join("P_A.txt");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let at = pick.index(lines.len());
        // a blank final line is just a trailing newline
        prop_assume!(!(junk.is_empty() && at + 1 == lines.len()));
        lines[at] = junk;
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match parse_tudataset::<f64>(dir.path()) {
            Err(Error::MalformedLine { line, file, .. }) => {
                prop_assert_eq!(line, at + 1);
                prop_assert_eq!(file, path);
            }
            other => prop_assert!(false, "{:?} on line {}: {:?}", junk, at + 1, other.map(|d| d.len())),
        }
    }
}
