//! Reader and canonical writer for the multi-file text format
//! (`<DS>_A.txt`, `<DS>_graph_indicator.txt`, `<DS>_graph_labels.txt`, …).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetBundle, GraphLabels, NodeLabels};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphSignal};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelKind {
    /// Integer class labels, remapped to `0..K` in numeric order.
    #[default]
    Classes,
    /// Real regression targets.
    Targets,
}

pub fn parse_tudataset<T: Scalar>(dir: impl AsRef<Path>) -> Result<DatasetBundle<T>> {
    parse_tudataset_with(dir, LabelKind::Classes)
}

pub fn parse_tudataset_with<T: Scalar>(dir: impl AsRef<Path>, kind: LabelKind) -> Result<DatasetBundle<T>> {
    let dir = dir.as_ref();
    let name = dataset_name(dir)?;
    let path = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = path("graph_indicator");
    let indicator: Vec<usize> = lines(&indicator_path)?
        .into_iter()
        .map(|(no, text)| parse_id(&indicator_path, no, text))
        .collect::<Result<_>>()?;
    let num_graphs = indicator.iter().copied().max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for (node, &g) in indicator.iter().enumerate() {
        local.push(members[g - 1].len());
        members[g - 1].push(node);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::InconsistentCounts(format!(
            "graph {} has no nodes in {}",
            empty + 1,
            indicator_path.display()
        )));
    }

    let labels_path = path("graph_labels");
    let label_lines = lines(&labels_path)?;
    if label_lines.len() != num_graphs {
        return Err(Error::InconsistentCounts(format!(
            "graph indicator references {num_graphs} graphs but {} lists {} labels",
            labels_path.display(),
            label_lines.len()
        )));
    }
    let labels = match kind {
        LabelKind::Classes => {
            let raw: Vec<i64> = label_lines
                .iter()
                .map(|(no, t)| {
                    t.parse().map_err(|_| malformed(&labels_path, *no, format!("`{t}` is not an integer label")))
                })
                .collect::<Result<_>>()?;
            let (values, names) = remap(&raw);
            GraphLabels::Classes { values, names }
        }
        LabelKind::Targets => GraphLabels::Targets(
            label_lines
                .iter()
                .map(|(no, t)| parse_real(&labels_path, *no, t))
                .collect::<Result<_>>()?,
        ),
    };

    let a_path = path("A");
    let total = indicator.len();
    // Per undirected pair: which directions have been seen.
    let mut seen: HashMap<(usize, usize), [bool; 2]> = HashMap::new();
    let mut edges: Vec<Vec<(usize, usize, T)>> = vec![Vec::new(); num_graphs];
    for (no, text) in lines(&a_path)? {
        let mut parts = text.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(malformed(&a_path, no, "expected `i, j`".into()));
        };
        let i = parse_id(&a_path, no, a)?;
        let j = parse_id(&a_path, no, b)?;
        for id in [i, j] {
            if id > total {
                return Err(Error::DanglingNodeId {
                    file: a_path.clone(),
                    line: no,
                    id,
                });
            }
        }
        if i == j {
            return Err(malformed(&a_path, no, format!("self-loop at node {i}")));
        }
        let (gi, gj) = (indicator[i - 1], indicator[j - 1]);
        if gi != gj {
            return Err(malformed(&a_path, no, format!("edge joins graph {gi} and graph {gj}")));
        }
        let key = (i.min(j), i.max(j));
        let dir = usize::from(i > j);
        let flags = seen.entry(key).or_insert([false; 2]);
        if flags[dir] {
            return Err(malformed(&a_path, no, format!("repeated edge ({i}, {j})")));
        }
        if !flags[1 - dir] {
            edges[gi - 1].push((local[key.0 - 1], local[key.1 - 1], T::one()));
        }
        flags[dir] = true;
    }

    let graphs = members
        .iter()
        .zip(&edges)
        .map(|(m, e)| build_graph(m.len(), e))
        .collect::<Result<Vec<_>>>()?;

    let node_labels = {
        let p = path("node_labels");
        if p.exists() {
            let raw: Vec<i64> = checked_node_lines(&p, total)?
                .iter()
                .map(|(no, t)| t.parse().map_err(|_| malformed(&p, *no, format!("`{t}` is not an integer label"))))
                .collect::<Result<_>>()?;
            let (ids, names) = remap(&raw);
            Some(NodeLabels {
                values: members.iter().map(|m| m.iter().map(|&v| ids[v]).collect()).collect(),
                names,
            })
        } else {
            None
        }
    };

    let node_attributes = {
        let p = path("node_attributes");
        if p.exists() {
            let rows: Vec<Vec<T>> = checked_node_lines(&p, total)?
                .iter()
                .map(|(no, t)| {
                    t.split(',')
                        .map(|v| parse_real(&p, *no, v.trim()).map(T::lit))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let width = rows[0].len();
            if let Some(bad) = rows.iter().position(|r| r.len() != width) {
                return Err(malformed(&p, bad + 1, format!("expected {width} attributes")));
            }
            Some(
                members
                    .iter()
                    .map(|m| {
                        let data = m.iter().flat_map(|&v| rows[v].clone()).collect();
                        GraphSignal::from_node_major(m.len(), width, data)
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        }
    };

    Ok(DatasetBundle {
        name,
        graphs,
        labels,
        node_labels,
        node_attributes,
    })
}

/// Prefix of the single `*_A.txt` file in `dir`.
fn dataset_name(dir: &Path) -> Result<String> {
    let entries = fs::read_dir(dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(dir.to_path_buf()),
        _ => Error::io(dir, e),
    })?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(stem) = entry.file_name().to_str().and_then(|f| f.strip_suffix("_A.txt")) {
            names.insert(stem.to_string());
        }
    }
    match names.len() {
        0 => Err(Error::MissingFile(dir.join("<DS>_A.txt"))),
        1 => Ok(names.pop_first().expect("one name")),
        _ => Err(Error::InconsistentCounts(format!(
            "{} holds several datasets: {}",
            dir.display(),
            names.into_iter().collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

/// `(1-based line number, trimmed text)`; only blank lines at the very end
/// are tolerated.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = read(path)?;
    let mut out: Vec<(usize, String)> = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim().to_string())).collect();
    while out.last().is_some_and(|(_, l)| l.is_empty()) {
        out.pop();
    }
    if let Some((no, _)) = out.iter().find(|(_, l)| l.is_empty()) {
        return Err(malformed(path, *no, "blank line".into()));
    }
    Ok(out)
}

fn checked_node_lines(path: &Path, nodes: usize) -> Result<Vec<(usize, String)>> {
    let l = lines(path)?;
    if l.len() != nodes {
        return Err(Error::InconsistentCounts(format!(
            "{} has {} lines for {nodes} nodes",
            path.display(),
            l.len()
        )));
    }
    Ok(l)
}

fn malformed(path: &Path, line: usize, reason: String) -> Error {
    Error::MalformedLine {
        file: path.to_path_buf(),
        line,
        reason,
    }
}

fn parse_id(path: &Path, line: usize, text: impl AsRef<str>) -> Result<usize> {
    let t = text.as_ref().trim();
    match t.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(malformed(path, line, format!("`{t}` is not a 1-based id"))),
    }
}

fn parse_real(path: &Path, line: usize, text: impl AsRef<str>) -> Result<f64> {
    let t = text.as_ref();
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| malformed(path, line, format!("`{t}` is not a finite number")))
}

/// Contiguous ids in increasing numeric order, plus the text of each.
fn remap(raw: &[i64]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeMap<i64, usize> = raw
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, v)| (v, k))
        .collect();
    let ids = raw.iter().map(|v| distinct[v]).collect();
    (ids, distinct.keys().map(i64::to_string).collect())
}

/// Writes `bundle` in canonical form: both directions of every edge, graphs
/// in order, labels as their original text.
pub fn write_tudataset<T: Scalar>(bundle: &DatasetBundle<T>, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut offsets = Vec::with_capacity(bundle.len());
    let mut acc = 0;
    for g in &bundle.graphs {
        offsets.push(acc);
        acc += g.n();
    }

    let mut a = String::new();
    let mut indicator = String::new();
    for (gi, g) in bundle.graphs.iter().enumerate() {
        let o = offsets[gi] + 1;
        for &(i, j, _) in g.edges() {
            let _ = writeln!(a, "{}, {}", i + o, j + o);
            let _ = writeln!(a, "{}, {}", j + o, i + o);
        }
        for _ in 0..g.n() {
            let _ = writeln!(indicator, "{}", gi + 1);
        }
    }
    let labels: String = (0..bundle.labels.len()).map(|i| bundle.labels.display(i) + "\n").collect();

    let mut files = vec![("A", a), ("graph_indicator", indicator), ("graph_labels", labels)];
    if let Some(nl) = &bundle.node_labels {
        let text = nl.values.iter().flatten().map(|&l| nl.names[l].clone() + "\n").collect();
        files.push(("node_labels", text));
    }
    if let Some(attrs) = &bundle.node_attributes {
        let mut text = String::new();
        for s in attrs {
            for v in 0..s.n() {
                let row: Vec<String> = (0..s.channels()).map(|c| s.get(v, c).to_string()).collect();
                let _ = writeln!(text, "{}", row.join(", "));
            }
        }
        files.push(("node_attributes", text));
    }
    let mut written = Vec::new();
    for (suffix, text) in files {
        let p = dir.join(format!("{}_{suffix}.txt", bundle.name));
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, a: &str, indicator: &str, labels: &str) {
        fs::write(dir.join("T_A.txt"), a).unwrap();
        fs::write(dir.join("T_graph_indicator.txt"), indicator).unwrap();
        fs::write(dir.join("T_graph_labels.txt"), labels).unwrap();
    }

    #[test]
    fn two_graph_fixture() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "1, 2\n2, 1\n3, 4\n4, 3\n", "1\n1\n2\n2\n", "1\n-1\n");
        let b: DatasetBundle = parse_tudataset(d.path()).unwrap();
        assert_eq!(b.name, "T");
        assert_eq!(b.len(), 2);
        for g in &b.graphs {
            assert_eq!(g.n(), 2);
            assert_eq!(g.edges(), &[(0, 1, 1.0)]);
        }
        let GraphLabels::Classes { values, names } = &b.labels else { panic!() };
        assert_eq!(values, &[1, 0]);
        assert_eq!(names, &["-1", "1"]);
    }

    #[test]
    fn edgeless_graphs_get_self_loops() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "", "1\n1\n2\n", "0\n1\n");
        let b: DatasetBundle = parse_tudataset(d.path()).unwrap();
        assert_eq!(b.graphs[0].n(), 2);
        assert!(b.graphs[0].edges().is_empty());
        assert_eq!(b.graphs[0].self_loop(0), 1.0);
        assert_eq!(b.graphs[1].degrees(), &[1.0]);
    }

    #[test]
    fn counts_must_agree() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "", "1\n2\n3\n", "0\n1\n");
        assert!(matches!(parse_tudataset::<f64>(d.path()), Err(Error::InconsistentCounts(_))));
    }

    #[test]
    fn errors_carry_positions() {
        let cases = [
            ("1, 2\n2; 1\n", "1\n1\n", 2),
            ("1, 2\n1, 2\n", "1\n1\n", 2),
            ("1, 1\n", "1\n1\n", 1),
            ("1, 2\n\n2, 1\n", "1\n1\n", 2),
        ];
        for (a, ind, line) in cases {
            let d = tempfile::tempdir().unwrap();
            write_fixture(d.path(), a, ind, "0\n");
            match parse_tudataset::<f64>(d.path()) {
                Err(Error::MalformedLine { line: l, .. }) => assert_eq!(l, line, "{a:?}"),
                other => panic!("{a:?}: {other:?}"),
            }
        }
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "1, 2\n2, 9\n", "1\n1\n", "0\n");
        assert!(matches!(
            parse_tudataset::<f64>(d.path()),
            Err(Error::DanglingNodeId { line: 2, id: 9, .. })
        ));
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "1, 2\n", "1\nx\n", "0\n");
        assert!(matches!(parse_tudataset::<f64>(d.path()), Err(Error::MalformedLine { line: 2, .. })));
    }

    #[test]
    fn missing_files_are_named() {
        let d = tempfile::tempdir().unwrap();
        assert!(matches!(parse_tudataset::<f64>(d.path()), Err(Error::MissingFile(_))));
        fs::write(d.path().join("T_A.txt"), "").unwrap();
        match parse_tudataset::<f64>(d.path()) {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("T_graph_indicator.txt")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_direction_pairs_are_accepted() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "2, 1\n2, 3\n3, 2\n", "1\n1\n1\n", "4\n");
        let b: DatasetBundle = parse_tudataset(d.path()).unwrap();
        assert_eq!(b.graphs[0].edges().len(), 2);
    }

    #[test]
    fn optional_node_files() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "1, 2\n2, 1\n", "1\n1\n2\n", "0\n1\n");
        fs::write(d.path().join("T_node_labels.txt"), "5\n2\n5\n").unwrap();
        fs::write(d.path().join("T_node_attributes.txt"), "1.5, 2\n0, 0\n-1, 3\n").unwrap();
        let b: DatasetBundle = parse_tudataset(d.path()).unwrap();
        let nl = b.node_labels.as_ref().unwrap();
        assert_eq!(nl.values, vec![vec![1, 0], vec![1]]);
        assert_eq!(nl.names, vec!["2", "5"]);
        let attrs = b.node_attributes.as_ref().unwrap();
        assert_eq!(attrs[1].as_slice(), &[-1.0, 3.0]);

        fs::write(d.path().join("T_node_labels.txt"), "5\n2\n").unwrap();
        assert!(matches!(parse_tudataset::<f64>(d.path()), Err(Error::InconsistentCounts(_))));
    }

    #[test]
    fn regression_targets() {
        let d = tempfile::tempdir().unwrap();
        write_fixture(d.path(), "", "1\n2\n", "0.25\n-3e2\n");
        let b: DatasetBundle = parse_tudataset_with(d.path(), LabelKind::Targets).unwrap();
        assert_eq!(b.labels, GraphLabels::Targets(vec![0.25, -300.0]));
        assert!(parse_tudataset::<f64>(d.path()).is_err());
    }
}
