//! Dataset directory format.
//!
//! * `edges.csv`: one `src,dst` pair per line, 0-indexed
//! * `features.csv`: `N` lines of `F` comma-separated floats
//! * `labels.csv`: `N` lines, one integer class id each
//!
//! Generated datasets additionally carry `meta.json` with block membership.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::graph::{DatasetBundle, Graph, MixedMeta};
use crate::{Error, Result};

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { file: file.into(), line: line + 1, msg: msg.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i, l.trim())).filter(|(_, l)| !l.is_empty())
}

/// Parse a features-format matrix (`N` rows of comma-separated floats).
pub fn parse_matrix(text: &str, file: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| parse_err(file, i, format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::RaggedFeatures {
                    row: rows.len(),
                    got: row.len(),
                    expected: first.len(),
                });
            }
        }
        rows.push(row);
    }
    let f = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), f), flat).map_err(|e| Error::Shape(e.to_string()))
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = String::with_capacity(m.len() * 8);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Load a dataset directory: symmetrise edges, add unit self-loops.
pub fn load_dataset(dir: &Path) -> Result<DatasetBundle> {
    let features = parse_matrix(&read(&dir.join("features.csv"))?, "features.csv")?;
    let n = features.nrows();

    let mut labels = Vec::with_capacity(n);
    for (i, line) in content_lines(&read(&dir.join("labels.csv"))?) {
        labels.push(line.parse::<usize>().map_err(|e| parse_err("labels.csv", i, e.to_string()))?);
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} feature rows", labels.len())));
    }

    let mut pairs = Vec::new();
    for (i, line) in content_lines(&read(&dir.join("edges.csv"))?) {
        let mut it = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err("edges.csv", i, "expected `src,dst`"));
        };
        let a = a.parse::<usize>().map_err(|e| parse_err("edges.csv", i, e.to_string()))?;
        let b = b.parse::<usize>().map_err(|e| parse_err("edges.csv", i, e.to_string()))?;
        pairs.push((a, b));
    }
    let graph = Graph::from_pairs(n, pairs, true)?;

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut bundle = DatasetBundle::new(name, graph, features, labels)?;

    let meta_path = dir.join("meta.json");
    if meta_path.exists() {
        let meta: MixedMeta = serde_json::from_str(&read(&meta_path)?)
            .map_err(|e| parse_err("meta.json", 0, e.to_string()))?;
        if meta.blocks.len() == n {
            bundle.meta = Some(meta);
        }
    }
    Ok(bundle)
}

/// Declared class count check, for callers that know `C` up front.
pub fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(node) => Err(Error::LabelOutOfRange { node, label: labels[node], classes }),
        None => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Write a bundle in the dataset directory format.
///
/// Edge weights are not representable in this format; every stored non-self
/// edge with positive weight is written once as `i,j` with `i < j`.
pub fn write_dataset(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut edges = String::new();
    for (i, j, w) in bundle.graph.edges() {
        if w > 0.0 {
            edges.push_str(&format!("{i},{j}\n"));
        }
    }
    write_file(&dir.join("edges.csv"), &edges)?;
    write_file(&dir.join("features.csv"), &format_matrix(&bundle.features))?;
    let labels: String = bundle.labels.iter().map(|l| format!("{l}\n")).collect();
    write_file(&dir.join("labels.csv"), &labels)?;
    if let Some(meta) = &bundle.meta {
        let json = serde_json::to_string_pretty(meta).expect("meta serialises");
        write_file(&dir.join("meta.json"), &json)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, s: &str) {
        fs::write(dir.join(name), s).unwrap();
    }

    #[test]
    fn two_node_directory() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "edges.csv", "0,1\n");
        write(tmp.path(), "features.csv", "1.0,2.0\n3.0,4.0\n");
        write(tmp.path(), "labels.csv", "0\n1\n");
        let b = load_dataset(tmp.path()).unwrap();
        assert_eq!(b.graph.degrees(), &[2.0, 2.0]);
        assert!(b.graph.has_edge(0, 0) && b.graph.has_edge(1, 0));
        assert_eq!(b.num_classes, 2);
    }

    #[test]
    fn ragged_features_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "edges.csv", "0,1\n");
        write(tmp.path(), "features.csv", "1.0,2.0\n3.0\n");
        write(tmp.path(), "labels.csv", "0\n1\n");
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("ragged features"), "{err}");
    }

    #[test]
    fn missing_file_and_bad_node() {
        let tmp = tempfile::tempdir().unwrap();
        write(tmp.path(), "features.csv", "1.0\n3.0\n");
        write(tmp.path(), "labels.csv", "0\n1\n");
        assert!(matches!(load_dataset(tmp.path()), Err(Error::MissingFile(_))));
        write(tmp.path(), "edges.csv", "0,5\n");
        assert!(matches!(load_dataset(tmp.path()), Err(Error::NodeOutOfRange { id: 5, .. })));
    }

    #[test]
    fn label_range_check() {
        assert!(check_labels(&[0, 1, 2], 3).is_ok());
        assert!(matches!(check_labels(&[0, 3], 3), Err(Error::LabelOutOfRange { node: 1, .. })));
    }

    #[test]
    fn write_then_load_preserves_bundle() {
        let tmp = tempfile::tempdir().unwrap();
        let g = Graph::from_pairs(3, [(0, 1), (1, 2)], true).unwrap();
        let x = Array2::from_shape_vec((3, 2), vec![0.1, -2.5e-7, 3.0, 1.0 / 3.0, 0.0, 7.25]).unwrap();
        let b = DatasetBundle::new("toy", g, x, vec![0, 1, 0]).unwrap();
        write_dataset(tmp.path(), &b).unwrap();
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.graph, b.graph);
        assert_eq!(back.features, b.features);
        assert_eq!(back.labels, b.labels);
    }
}
