//! Undirected node-classification graphs in CSR form, per-edge message
//! weights, degree statistics, node splits and graph files.

mod io;
pub(crate) mod split;

use std::sync::Arc;

pub use io::{load_graph, read_graph, save_graph, write_graph, GraphFormat, BINARY_MAGIC};
pub use split::{make_splits, Role, SplitMasks, SplitScheme};

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor};

/// An undirected graph with node features and (optionally missing) labels.
///
/// Adjacency is stored symmetrically: every undirected edge appears once in
/// each endpoint's neighbor list. Neighbor lists are sorted, without
/// duplicates or self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor,
    labels: Vec<Option<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from undirected pairs, each listed once.
    pub fn from_edges(
        features: Tensor,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = features.rows();
        let mut degree = vec![0usize; n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) references a node outside 0..{}",
                    u, v, n
                )));
            }
            if u == v {
                return Err(Error::Validation(format!("self-loop on node {}", u)));
            }
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for u in 0..n {
            offsets[u + 1] = offsets[u] + degree[u];
        }
        let mut cursor = offsets.clone();
        let mut neighbors = vec![0usize; offsets[n]];
        for &(u, v) in edges {
            neighbors[cursor[u]] = v;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            cursor[v] += 1;
        }
        for u in 0..n {
            neighbors[offsets[u]..offsets[u + 1]].sort_unstable();
        }
        Self::from_csr(features, labels, num_classes, offsets, neighbors)
    }

    /// Builds a graph from symmetric CSR arrays, validating every invariant.
    pub fn from_csr(
        features: Tensor,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        offsets: Vec<usize>,
        neighbors: Vec<usize>,
    ) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n {
            return Err(Error::Validation(format!("{} labels for {} nodes", labels.len(), n)));
        }
        if let Some((u, y)) = labels
            .iter()
            .enumerate()
            .find_map(|(u, y)| y.filter(|&c| c >= num_classes).map(|c| (u, c)))
        {
            return Err(Error::Validation(format!(
                "node {} has label {} but there are {} classes",
                u, y, num_classes
            )));
        }
        if offsets.len() != n + 1 || offsets[0] != 0 || offsets[n] != neighbors.len() {
            return Err(Error::Validation("malformed CSR offsets".into()));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Validation("CSR offsets decrease".into()));
        }
        let g = Self {
            num_nodes: n,
            offsets,
            neighbors,
            features,
            labels,
            num_classes,
        };
        for u in 0..n {
            let nbrs = g.neighbors(u);
            for (i, &v) in nbrs.iter().enumerate() {
                if v >= n {
                    return Err(Error::Validation(format!("node {} has neighbor {} out of range", u, v)));
                }
                if v == u {
                    return Err(Error::Validation(format!("self-loop on node {}", u)));
                }
                if i > 0 && nbrs[i - 1] >= v {
                    return Err(Error::Validation(format!(
                        "neighbor list of node {} is unsorted or has duplicates",
                        u
                    )));
                }
                if g.neighbors(v).binary_search(&u).is_err() {
                    return Err(Error::Validation(format!(
                        "asymmetric adjacency: {} -> {} has no reverse edge",
                        u, v
                    )));
                }
            }
        }
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of directed edge entries (twice the undirected edge count).
    pub fn num_directed_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Range of `u`'s entries in the CSR arrays (and in [`EdgeWeights`]).
    pub fn edge_range(&self, u: usize) -> std::ops::Range<usize> {
        self.offsets[u]..self.offsets[u + 1]
    }

    /// Undirected edges with `u < v`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| v > u)
                .map(move |&v| (u, v))
        })
    }

    pub fn degree(&self, u: usize) -> Result<usize> {
        if u >= self.num_nodes {
            return Err(Error::Index {
                index: u,
                len: self.num_nodes,
                what: "nodes",
            });
        }
        Ok(self.offsets[u + 1] - self.offsets[u])
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    /// `ln(d_u + 1) / ln(max_v d_v + 1)`.
    pub fn log_normalized_degree(&self, u: usize) -> Result<f64> {
        let d = self.degree(u)?;
        let max = self.max_degree();
        if max == 0 {
            return Err(Error::Degenerate("graph has no edges".into()));
        }
        Ok(((d + 1) as f64).ln() / ((max + 1) as f64).ln())
    }

    /// Log-normalized degree of every node against `reference_max`, clamped
    /// to `[0, 1]` (only relevant when the reference is another graph's max).
    pub fn log_normalized_degrees(&self, reference_max: Option<usize>) -> Result<Vec<f64>> {
        let max = reference_max.unwrap_or_else(|| self.max_degree());
        if max == 0 {
            return Err(Error::Degenerate("graph has no edges".into()));
        }
        let denom = ((max + 1) as f64).ln();
        Ok(self
            .degrees()
            .into_iter()
            .map(|d| (((d + 1) as f64).ln() / denom).min(1.0))
            .collect())
    }

    pub fn label(&self, u: usize) -> Result<usize> {
        self.labels
            .get(u)
            .copied()
            .ok_or(Error::Index {
                index: u,
                len: self.num_nodes,
                what: "nodes",
            })?
            .ok_or_else(|| Error::Contract(format!("node {} has no label", u)))
    }

    /// All labels; fails if any node is unlabeled.
    pub fn require_labels(&self) -> Result<Vec<usize>> {
        (0..self.num_nodes).map(|u| self.label(u)).collect()
    }

    pub fn has_all_labels(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Empirical class distribution over labeled nodes.
    pub fn label_distribution(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.num_classes];
        let mut total = 0.0;
        for y in self.labels.iter().flatten() {
            counts[*y] += 1.0;
            total += 1.0;
        }
        if total > 0.0 {
            counts.iter_mut().for_each(|c| *c /= total);
        }
        counts
    }

    /// Copy of this graph with labels replaced.
    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        Self::from_csr(
            self.features.clone(),
            labels,
            self.num_classes,
            self.offsets.clone(),
            self.neighbors.clone(),
        )
    }

    /// Row-normalized message operator: entry `(u, v)` is `w_uv / d_u`.
    ///
    /// The divisor is the unweighted degree, so scaling weights rescales the
    /// aggregate rather than cancelling out. Isolated nodes aggregate to zero.
    pub fn mean_operator(&self, weights: &EdgeWeights) -> Result<Arc<CsrMatrix>> {
        if weights.len() != self.neighbors.len() {
            return Err(Error::dim(
                "mean_operator",
                format!("{} weights for {} edges", weights.len(), self.neighbors.len()),
            ));
        }
        let mut values = Vec::with_capacity(self.neighbors.len());
        for u in 0..self.num_nodes {
            let range = self.edge_range(u);
            let d = range.len() as f64;
            values.extend(weights.as_slice()[range].iter().map(|w| w / d));
        }
        Ok(Arc::new(CsrMatrix {
            num_rows: self.num_nodes,
            num_cols: self.num_nodes,
            offsets: self.offsets.clone(),
            indices: self.neighbors.clone(),
            values,
        }))
    }
}

/// Per-entry message weights parallel to the CSR neighbor array: the entry at
/// position `p` in `u`'s range weights the message from that neighbor into `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights(Vec<f64>);

impl EdgeWeights {
    pub fn uniform(g: &Graph) -> Self {
        Self(vec![1.0; g.num_directed_edges()])
    }

    pub fn new(g: &Graph, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != g.num_directed_edges() {
            return Err(Error::dim(
                "edge weights",
                format!("{} weights for {} edges", weights.len(), g.num_directed_edges()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation("edge weights must be finite and non-negative".into()));
        }
        Ok(Self(weights))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|w| w * factor).collect())
    }
}
