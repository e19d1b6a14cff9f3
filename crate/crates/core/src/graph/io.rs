//! Graph files.
//!
//! Text format, one record per line:
//!
//! ```text
//! nodes=<n> classes=<c> feat_dim=<d>
//! node <id> <label|-1> <f1> ... <fd>
//! edge <u> <v>
//! ```
//!
//! Each undirected edge is listed once; the loader mirrors it. Blank lines and
//! lines starting with `#` are ignored. The binary variant starts with the
//! magic bytes `TSAG1` and stores the CSR arrays directly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::Graph;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BINARY_MAGIC: &[u8; 5] = b"TSAG1";
const BINARY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphFormat {
    Text,
    Binary,
}

impl GraphFormat {
    /// `.tsag` files are binary, everything else text.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsag") => GraphFormat::Binary,
            _ => GraphFormat::Text,
        }
    }
}

pub fn save_graph(path: impl AsRef<Path>, g: &Graph) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_graph(g, GraphFormat::for_path(path)))?;
    Ok(())
}

/// Loads either format, detected from the leading bytes.
pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    read_graph(&fs::read(path)?)
}

pub fn write_graph(g: &Graph, format: GraphFormat) -> Vec<u8> {
    match format {
        GraphFormat::Text => write_text(g).into_bytes(),
        GraphFormat::Binary => write_binary(g),
    }
}

pub fn read_graph(bytes: &[u8]) -> Result<Graph> {
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(bytes)
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("not utf-8 text: {}", e),
        })?;
        read_text(text)
    }
}

fn write_text(g: &Graph) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "nodes={} classes={} feat_dim={}",
        g.num_nodes(),
        g.num_classes(),
        g.feat_dim()
    );
    for u in 0..g.num_nodes() {
        let label = g.labels()[u].map_or(-1, |y| y as i64);
        let _ = write!(out, "node {} {}", u, label);
        for v in g.features().row(u) {
            // `{}` on f64 prints the shortest representation that round-trips
            let _ = write!(out, " {}", v);
        }
        out.push('\n');
    }
    for (u, v) in g.undirected_edges() {
        let _ = writeln!(out, "edge {} {}", u, v);
    }
    out
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing {}", what),
    })?;
    tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("invalid {} '{}'", what, tok),
    })
}

fn read_text(text: &str) -> Result<Graph> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "empty graph file".into(),
    })?;
    let mut dims = [None; 3];
    for tok in header.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| Error::Parse {
            line: hline,
            msg: format!("expected key=value, found '{}'", tok),
        })?;
        let slot = match key {
            "nodes" => 0,
            "classes" => 1,
            "feat_dim" => 2,
            other => {
                return Err(Error::Parse {
                    line: hline,
                    msg: format!("unknown header key '{}'", other),
                })
            }
        };
        dims[slot] = Some(parse_field::<usize>(Some(value), hline, key)?);
    }
    let [Some(n), Some(classes), Some(feat_dim)] = dims else {
        return Err(Error::Parse {
            line: hline,
            msg: "header needs nodes=, classes= and feat_dim=".into(),
        });
    };

    let mut features = Tensor::zeros(n, feat_dim);
    let mut labels = vec![None; n];
    let mut seen = vec![false; n];
    let mut edges = Vec::new();
    let mut pairs = std::collections::HashSet::new();
    for (line, content) in lines {
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("node") => {
                let id: usize = parse_field(toks.next(), line, "node id")?;
                if id >= n {
                    return Err(Error::Parse {
                        line,
                        msg: format!("node id {} out of range 0..{}", id, n),
                    });
                }
                if std::mem::replace(&mut seen[id], true) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("node {} listed twice", id),
                    });
                }
                let label: i64 = parse_field(toks.next(), line, "label")?;
                labels[id] = match label {
                    -1 => None,
                    y if y >= 0 && (y as usize) < classes => Some(y as usize),
                    y => {
                        return Err(Error::Parse {
                            line,
                            msg: format!("label {} outside 0..{}", y, classes),
                        })
                    }
                };
                for j in 0..feat_dim {
                    let v: f64 = parse_field(toks.next(), line, &format!("feature {}", j))?;
                    features.set(id, j, v);
                }
                if toks.next().is_some() {
                    return Err(Error::Parse {
                        line,
                        msg: format!("more than {} features", feat_dim),
                    });
                }
            }
            Some("edge") => {
                let u: usize = parse_field(toks.next(), line, "edge source")?;
                let v: usize = parse_field(toks.next(), line, "edge target")?;
                if u >= n || v >= n {
                    return Err(Error::Parse {
                        line,
                        msg: format!("edge ({}, {}) references a node outside 0..{}", u, v, n),
                    });
                }
                if u == v {
                    return Err(Error::Parse {
                        line,
                        msg: format!("self-loop on node {}", u),
                    });
                }
                if !pairs.insert((u.min(v), u.max(v))) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("edge {} {} listed more than once (either direction)", u, v),
                    });
                }
                edges.push((u, v));
            }
            Some(other) => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown record '{}'", other),
                })
            }
            None => unreachable!("blank lines are filtered"),
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parse {
            line: 0,
            msg: format!("node {} has no node line", missing),
        });
    }
    Graph::from_edges(features, labels, classes, &edges)
}

fn write_binary(g: &Graph) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(BINARY_MAGIC);
    w.u32(BINARY_VERSION);
    w.u64(g.num_nodes() as u64);
    w.u64(g.num_classes() as u64);
    w.tensor(g.features());
    for y in g.labels() {
        w.i64(y.map_or(-1, |y| y as i64));
    }
    for &o in g.offsets() {
        w.u64(o as u64);
    }
    for &v in g.csr_neighbors() {
        w.u64(v as u64);
    }
    w.into_inner()
}

fn read_binary(bytes: &[u8]) -> Result<Graph> {
    let mut r = ByteReader::new(bytes, "graph file");
    r.take(BINARY_MAGIC.len())?;
    let version = r.u32()?;
    if version != BINARY_VERSION {
        return Err(Error::Checkpoint(format!("unsupported graph file version {}", version)));
    }
    let n = r.usize()?;
    let classes = r.usize()?;
    let features = r.tensor()?;
    if features.rows() != n {
        return Err(Error::Validation(format!("{} feature rows for {} nodes", features.rows(), n)));
    }
    if n.saturating_mul(16) > r.remaining() {
        return Err(Error::Checkpoint("graph file truncated".into()));
    }
    let labels = (0..n)
        .map(|_| {
            let y = r.i64()?;
            Ok(if y < 0 { None } else { Some(y as usize) })
        })
        .collect::<Result<Vec<_>>>()?;
    let offsets = (0..=n).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let m = *offsets.last().unwrap_or(&0);
    if m.saturating_mul(8) != r.remaining() {
        return Err(Error::Checkpoint("graph file length does not match its edge count".into()));
    }
    let neighbors = (0..m).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    Graph::from_csr(features, labels, classes, offsets, neighbors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Graph {
        let features = Tensor::from_rows(&[vec![0.1, -2.5], vec![1e-17, 3.0], vec![0.3333333333333333, 7.0]]).unwrap();
        Graph::from_edges(features, vec![Some(1), None, Some(0)], 2, &[(0, 1), (2, 1)]).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let g = sample();
        let back = read_graph(&write_graph(&g, GraphFormat::Text)).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn binary_round_trip() {
        let g = sample();
        let bytes = write_graph(&g, GraphFormat::Binary);
        assert!(bytes.starts_with(BINARY_MAGIC));
        assert_eq!(read_graph(&bytes).unwrap(), g);
    }

    #[test]
    fn edgeless_round_trip() {
        let g = Graph::from_edges(Tensor::zeros(4, 1), vec![Some(0); 4], 1, &[]).unwrap();
        let back = read_graph(&write_graph(&g, GraphFormat::Text)).unwrap();
        assert!(back.degrees().iter().all(|&d| d == 0));
        assert_eq!(back, g);
    }

    #[test]
    fn malformed_text_reports_line() {
        let text = "nodes=2 classes=2 feat_dim=1\nnode 0 0 1.0\nnode 1 1 abc\n";
        match read_graph(text.as_bytes()) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("feature 0"));
            }
            other => panic!("expected parse error, got {:?}", other),
        }
    }

    #[test]
    fn doubly_listed_edge_is_rejected() {
        let text = "nodes=2 classes=1 feat_dim=1\nnode 0 0 1\nnode 1 0 1\nedge 0 1\nedge 1 0\n";
        assert!(matches!(read_graph(text.as_bytes()), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn asymmetric_binary_is_rejected() {
        let g = sample();
        let mut bytes = write_graph(&g, GraphFormat::Binary);
        // node 0's single neighbor entry is the first u64 after the offsets; point it at node 2
        let neighbors_start = bytes.len() - 8 * g.num_directed_edges();
        bytes[neighbors_start..neighbors_start + 8].copy_from_slice(&2u64.to_le_bytes());
        assert!(matches!(read_graph(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let bytes = write_graph(&sample(), GraphFormat::Binary);
        assert!(read_graph(&bytes[..bytes.len() - 3]).is_err());
    }
}
