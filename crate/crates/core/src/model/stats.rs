use serde::{Deserialize, Serialize};

use crate::dist::ClassMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Label statistics of the source graph, needed to align a target graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    /// Row `i` is the distribution of neighbor labels around class-`i` nodes.
    pub nbr_dist: ClassMatrix,
    pub label_dist: Vec<f64>,
    pub max_degree: usize,
    /// Classes with no labeled outgoing edges; their row was set to uniform.
    pub empty_rows: Vec<bool>,
}

/// Counts directed edges `u → v` whose endpoints are both labeled.
pub fn compute_source_stats(g: &Graph, labels: &[Option<usize>]) -> Result<SourceStats> {
    if labels.len() != g.num_nodes() {
        return Err(Error::dim(
            "compute_source_stats",
            format!("{} labels for {} nodes", labels.len(), g.num_nodes()),
        ));
    }
    let k = g.num_classes();
    if let Some(bad) = labels.iter().flatten().find(|&&y| y >= k) {
        return Err(Error::Index {
            index: *bad,
            len: k,
            what: "classes",
        });
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::Contract("source statistics need labeled nodes".into()));
    }
    let mut nbr = ClassMatrix::filled(k, 0.0);
    let mut label_counts = vec![0.0; k];
    for u in 0..g.num_nodes() {
        let Some(yu) = labels[u] else { continue };
        label_counts[yu] += 1.0;
        for &v in g.neighbors(u) {
            if let Some(yv) = labels[v] {
                nbr.set(yu, yv, nbr.get(yu, yv) + 1.0);
            }
        }
    }
    let empty_rows = nbr.normalize_rows();
    let total: f64 = label_counts.iter().sum();
    Ok(SourceStats {
        nbr_dist: nbr,
        label_dist: label_counts.iter().map(|c| c / total).collect(),
        max_degree: g.max_degree(),
        empty_rows,
    })
}
