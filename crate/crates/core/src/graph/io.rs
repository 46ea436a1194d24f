use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use super::AttributedGraph;
use crate::error::{Error, Result};

/// Counters for input lines that were accepted but altered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadWarnings {
    /// Citations naming a node id absent from the content file.
    pub unknown_endpoint_edges: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, Result<String>)> + '_> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, line)| (i + 1, line.map_err(|e| Error::io(path, e)))))
}

fn is_skippable(line: &str) -> bool {
    let trimmed = line.trim();
    trimmed.is_empty() || trimmed.starts_with('#')
}

/// Reads a citation-network pair of files: a content file with one
/// `node_id \t f_1 .. f_d \t label` row per node and a cites file with one
/// `source \t target` row per citation.
///
/// Citations are symmetrized. Edges with unknown endpoints, repeats and
/// self-citations are dropped and counted in the returned warnings.
pub fn load_citation_dataset(
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
) -> Result<(AttributedGraph, LoadWarnings)> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();

    let mut node_ids = Vec::new();
    let mut index_of = HashMap::new();
    let mut label_strings = Vec::new();
    let mut values = Vec::new();
    let mut width = None;

    for (line_no, line) in open_lines(content_path)? {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: content_path.to_path_buf(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() < 3 {
            return Err(parse_err(format!(
                "expected node id, features and label, found {} fields",
                fields.len()
            )));
        }
        let d = fields.len() - 2;
        match width {
            None => width = Some(d),
            Some(w) if w != d => {
                return Err(parse_err(format!("expected {w} features, found {d}")));
            }
            _ => {}
        }
        let id = fields[0].trim().to_string();
        if index_of.insert(id.clone(), node_ids.len()).is_some() {
            return Err(parse_err(format!("duplicate node id {id:?}")));
        }
        for (col, raw) in fields[1..=d].iter().enumerate() {
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("feature {} is not numeric: {raw:?}", col + 1)))?;
            values.push(v);
        }
        node_ids.push(id);
        label_strings.push(fields[d + 1].trim().to_string());
    }

    let n = node_ids.len();
    let Some(d) = width else {
        return Err(Error::EmptyInput(format!(
            "{} lists no nodes",
            content_path.display()
        )));
    };
    let features = Array2::from_shape_vec((n, d), values).expect("row widths checked per line");

    let class_names: Vec<String> = label_strings
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = label_strings
        .iter()
        .map(|s| class_names.binary_search(s).expect("collected above"))
        .collect();

    let mut warnings = LoadWarnings::default();
    let mut seen = BTreeSet::new();
    for (line_no, line) in open_lines(cites_path)? {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: cites_path.to_path_buf(),
                line: line_no,
                message: format!("expected source and target, found {} fields", fields.len()),
            });
        }
        let (Some(&u), Some(&v)) = (index_of.get(fields[0]), index_of.get(fields[1])) else {
            warnings.unknown_endpoint_edges += 1;
            continue;
        };
        if u == v {
            warnings.self_loops += 1;
            continue;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            warnings.duplicate_edges += 1;
        }
    }
    if warnings != LoadWarnings::default() {
        log::warn!(
            "{}: dropped {} edges with unknown endpoints, {} duplicates, {} self-loops",
            cites_path.display(),
            warnings.unknown_endpoint_edges,
            warnings.duplicate_edges,
            warnings.self_loops
        );
    }

    let edges: Vec<(usize, usize)> = seen.into_iter().collect();
    let graph = AttributedGraph::new(features, &edges, Some(labels))?
        .with_node_ids(node_ids)?
        .with_class_names(class_names)?;
    Ok((graph, warnings))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_header(out: &mut impl Write, header: &str) -> std::io::Result<()> {
    for line in header.lines() {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

/// Writes `graph` in the same two-file layout `load_citation_dataset`
/// reads. Unlabeled graphs get the placeholder class `unlabeled`.
pub fn save_citation_dataset(
    graph: &AttributedGraph,
    content_path: impl AsRef<Path>,
    cites_path: impl AsRef<Path>,
    header: &str,
) -> Result<()> {
    let content_path = content_path.as_ref();
    let cites_path = cites_path.as_ref();

    let mut out = create(content_path)?;
    let write_content = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(out, header)?;
        for (i, row) in graph.features().rows().into_iter().enumerate() {
            write!(out, "{}", graph.node_ids()[i])?;
            for v in row {
                write!(out, "\t{v}")?;
            }
            match graph.labels() {
                Some(labels) => writeln!(out, "\t{}", graph.class_names()[labels[i]])?,
                None => writeln!(out, "\tunlabeled")?,
            }
        }
        out.flush()
    };
    write_content(&mut out).map_err(|e| Error::io(content_path, e))?;

    let mut out = create(cites_path)?;
    let write_cites = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        write_header(out, header)?;
        let ids = graph.node_ids();
        for (u, v) in graph.adjacency().edges() {
            writeln!(out, "{}\t{}", ids[u], ids[v])?;
        }
        out.flush()
    };
    write_cites(&mut out).map_err(|e| Error::io(cites_path, e))
}

/// Edge list export: one `u v` pair (internal indices, `u < v`) per line.
pub fn write_edge_list(graph: &AttributedGraph, path: impl AsRef<Path>, header: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut body = || -> std::io::Result<()> {
        write_header(&mut out, header)?;
        for (u, v) in graph.adjacency().edges() {
            writeln!(out, "{u} {v}")?;
        }
        out.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

/// Dense matrix export, one space-separated row per line.
pub fn write_feature_matrix(matrix: &Array2<f64>, path: impl AsRef<Path>, header: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut body = || -> std::io::Result<()> {
        write_header(&mut out, header)?;
        for row in matrix.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        out.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn repeated_citation_counts_once() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "10\t1\t0\tA\n20\t0\t1\tB\n");
        let cites = write(dir.path(), "g.cites", "10\t20\n20\t10\n10\t20\n");
        let (g, warnings) = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.feature_dim(), 2);
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.num_classes(), Some(2));
        assert_eq!(warnings.duplicate_edges, 2);
    }

    #[test]
    fn unknown_endpoints_and_self_loops_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "a\t1\tx\nb\t2\tx\nc\t3\ty\n");
        let cites = write(dir.path(), "g.cites", "# comment\na\tb\na\tzz\nc\tc\nb\tc\n");
        let (g, warnings) = load_citation_dataset(&content, &cites).unwrap();
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(warnings.unknown_endpoint_edges, 1);
        assert_eq!(warnings.self_loops, 1);
        assert_eq!(g.labels().unwrap(), &[0, 0, 1]);
    }

    #[test]
    fn ragged_row_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "a\t1\t0\tx\nb\t1\tx\n");
        let cites = write(dir.path(), "g.cites", "");
        match load_citation_dataset(&content, &cites) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_feature_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "a\t1\tx\nb\toops\tx\n");
        let cites = write(dir.path(), "g.cites", "");
        let err = load_citation_dataset(&content, &cites).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_content_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "# nothing here\n");
        let cites = write(dir.path(), "g.cites", "");
        let err = load_citation_dataset(&content, &cites).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn malformed_cites_line_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let content = write(dir.path(), "g.content", "a\t1\tx\nb\t1\tx\n");
        let cites = write(dir.path(), "g.cites", "a\tb\na\n");
        let err = load_citation_dataset(&content, &cites).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
