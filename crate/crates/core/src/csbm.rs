//! Contextual stochastic block model: block-structured random graphs with
//! Gaussian class-conditional node features, plus the named source/target
//! conditions of the synthetic structure-shift benchmark.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::ClassMatrix;
use crate::error::{Error, Result};
use crate::graph::split::exact_counts;
use crate::graph::Graph;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsbmSpec {
    pub num_nodes: usize,
    pub label_ratio: Vec<f64>,
    /// Symmetric class-pair edge probabilities.
    pub connection: Vec<Vec<f64>>,
    /// One mean vector per class.
    pub class_means: Vec<Vec<f64>>,
    /// Per-dimension standard deviation of the feature noise.
    pub feature_std: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    SourceImbal,
    SourceBal,
    Cond1,
    Cond2,
    Cond3,
    Cond4,
    Cond5,
    Cond6,
    Cond7,
    Cond8,
}

impl ConditionId {
    pub const ALL: [ConditionId; 10] = [
        ConditionId::SourceImbal,
        ConditionId::SourceBal,
        ConditionId::Cond1,
        ConditionId::Cond2,
        ConditionId::Cond3,
        ConditionId::Cond4,
        ConditionId::Cond5,
        ConditionId::Cond6,
        ConditionId::Cond7,
        ConditionId::Cond8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConditionId::SourceImbal => "source_imbal",
            ConditionId::SourceBal => "source_bal",
            ConditionId::Cond1 => "cond1",
            ConditionId::Cond2 => "cond2",
            ConditionId::Cond3 => "cond3",
            ConditionId::Cond4 => "cond4",
            ConditionId::Cond5 => "cond5",
            ConditionId::Cond6 => "cond6",
            ConditionId::Cond7 => "cond7",
            ConditionId::Cond8 => "cond8",
        }
    }

    /// The source condition a target condition is paired with.
    pub fn paired_source(self) -> ConditionId {
        match self {
            ConditionId::SourceBal | ConditionId::Cond7 | ConditionId::Cond8 => ConditionId::SourceBal,
            _ => ConditionId::SourceImbal,
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConditionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditionId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown CSBM condition '{}'", s)))
    }
}

const IMBALANCED: [f64; 3] = [0.1, 0.3, 0.6];
const BALANCED: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

fn block_matrix(p: f64, q: f64) -> Vec<Vec<f64>> {
    (0..3)
        .map(|i| (0..3).map(|j| if i == j { p } else { q }).collect())
        .collect()
}

/// Parameters of a named condition: 6000 nodes, 3 classes, unit-vector
/// class means and noise std 0.3.
pub fn builtin_spec(c: ConditionId) -> CsbmSpec {
    let (ratio, p, q) = match c {
        ConditionId::SourceImbal => (IMBALANCED, 0.01, 0.0025),
        ConditionId::SourceBal => (BALANCED, 0.01, 0.0025),
        ConditionId::Cond1 => (IMBALANCED, 0.005, 0.00375),
        ConditionId::Cond2 => (IMBALANCED, 0.005, 0.005),
        ConditionId::Cond3 => (IMBALANCED, 0.005 / 2.0, 0.00375 / 2.0),
        ConditionId::Cond4 => (IMBALANCED, 0.005 / 2.0, 0.005 / 2.0),
        ConditionId::Cond5 => (BALANCED, 0.005 / 2.0, 0.00375 / 2.0),
        ConditionId::Cond6 => (BALANCED, 0.005 / 2.0, 0.005 / 2.0),
        ConditionId::Cond7 => (IMBALANCED, 0.005 / 2.0, 0.00375 / 2.0),
        ConditionId::Cond8 => (IMBALANCED, 0.005 / 2.0, 0.005 / 2.0),
    };
    CsbmSpec {
        num_nodes: 6000,
        label_ratio: ratio.to_vec(),
        connection: block_matrix(p, q),
        class_means: (0..3)
            .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect(),
        feature_std: 0.3,
        seed: 0,
    }
}

impl CsbmSpec {
    pub fn num_classes(&self) -> usize {
        self.label_ratio.len()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        if k == 0 {
            return Err(Error::Config("label_ratio is empty".into()));
        }
        if self.label_ratio.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (self.label_ratio.iter().sum::<f64>() - 1.0).abs() > 1e-12
        {
            return Err(Error::Config("label_ratio must be a probability vector".into()));
        }
        if self.connection.len() != k || self.connection.iter().any(|r| r.len() != k) {
            return Err(Error::Config(format!("connection matrix must be {}x{}", k, k)));
        }
        for i in 0..k {
            for j in 0..k {
                let b = self.connection[i][j];
                if !(0.0..=1.0).contains(&b) {
                    return Err(Error::Config(format!("connection[{}][{}] = {} outside [0, 1]", i, j, b)));
                }
                if b != self.connection[j][i] {
                    return Err(Error::Config("connection matrix must be symmetric".into()));
                }
            }
        }
        let dim = self.class_means.first().map_or(0, Vec::len);
        if self.class_means.len() != k || dim == 0 || self.class_means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config(format!("class_means must be {} equal-length vectors", k)));
        }
        if !(self.feature_std > 0.0 && self.feature_std.is_finite()) {
            return Err(Error::Config("feature_std must be positive".into()));
        }
        Ok(())
    }

    /// Exact per-class node counts: `round(n · P_Y)` by largest remainder.
    pub fn class_counts(&self) -> Vec<usize> {
        exact_counts(self.num_nodes, &self.label_ratio)
    }
}

/// Samples a graph. Deterministic in `spec.seed`.
///
/// Labels come from exact-count allocation shuffled over node ids. Each
/// unordered pair of distinct nodes is connected independently with the
/// probability of its class pair; candidate pairs inside each class block are
/// visited by geometric skipping, so cost scales with the number of edges.
pub fn generate(spec: &CsbmSpec) -> Result<Graph> {
    spec.validate()?;
    let k = spec.num_classes();
    let n = spec.num_nodes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &count)| std::iter::repeat_n(c, count))
        .collect();
    labels.shuffle(&mut rng);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (u, &y) in labels.iter().enumerate() {
        members[y].push(u);
    }

    let mut edges = Vec::new();
    for a in 0..k {
        for b in a..k {
            let p = spec.connection[a][b];
            let total = if a == b {
                let m = members[a].len() as u64;
                m * m.saturating_sub(1) / 2
            } else {
                members[a].len() as u64 * members[b].len() as u64
            };
            for idx in skip_sample(total, p, &mut rng) {
                let (u, v) = if a == b {
                    let (i, j) = triangle_pair(idx);
                    (members[a][i], members[a][j])
                } else {
                    let nb = members[b].len() as u64;
                    (members[a][(idx / nb) as usize], members[b][(idx % nb) as usize])
                };
                edges.push((u, v));
            }
        }
    }

    let dim = spec.class_means[0].len();
    let mut features = Tensor::zeros(n, dim);
    for (u, &y) in labels.iter().enumerate() {
        for (j, mu) in spec.class_means[y].iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            features.set(u, j, mu + spec.feature_std * z);
        }
    }

    Graph::from_edges(features, labels.into_iter().map(Some).collect(), k, &edges)
}

/// Indices in `0..total` each kept with probability `p`.
fn skip_sample(total: u64, p: f64, rng: &mut impl Rng) -> Vec<u64> {
    if p <= 0.0 || total == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..total).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut idx: u64 = 0;
    loop {
        // number of failures before the next success, Geometric(p)
        let u: f64 = 1.0 - rng.random::<f64>();
        let skip = (u.ln() / log_q).floor();
        if skip >= (total - idx) as f64 {
            break;
        }
        idx += skip as u64;
        out.push(idx);
        idx += 1;
        if idx >= total {
            break;
        }
    }
    out
}

/// Maps a linear index to the pair `(i, j)`, `i < j`, in the order
/// (0,1), (0,2), (1,2), (0,3), (1,3), (2,3), ...
fn triangle_pair(idx: u64) -> (usize, usize) {
    let mut j = ((((8 * idx + 1) as f64).sqrt() + 1.0) / 2.0).floor() as u64;
    while j * (j - 1) / 2 > idx {
        j -= 1;
    }
    while (j + 1) * j / 2 <= idx {
        j += 1;
    }
    let i = idx - j * (j - 1) / 2;
    (i as usize, j as usize)
}

/// Closed-form `P(Y_v = j | Y_u = i, v ∈ N(u))`: row `i` proportional to
/// `P_Y(j) · B[i][j]`.
pub fn expected_neighbor_distribution(spec: &CsbmSpec) -> Result<ClassMatrix> {
    let k = spec.num_classes();
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let row: Vec<f64> = (0..k).map(|j| spec.label_ratio[j] * spec.connection[i][j]).collect();
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(format!("class {} has no possible neighbors", i)));
        }
        rows.push(row.into_iter().map(|v| v / total).collect());
    }
    ClassMatrix::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(p: f64, q: f64, n: usize) -> CsbmSpec {
        CsbmSpec {
            num_nodes: n,
            label_ratio: vec![0.5, 0.5],
            connection: vec![vec![p, q], vec![q, p]],
            class_means: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            feature_std: 0.3,
            seed: 4,
        }
    }

    #[test]
    fn builtin_parameters() {
        let c1 = builtin_spec(ConditionId::Cond1);
        assert_eq!((c1.connection[0][0], c1.connection[0][1]), (0.005, 0.00375));
        let c3 = builtin_spec(ConditionId::Cond3);
        assert_eq!((c3.connection[1][1], c3.connection[1][2]), (0.0025, 0.001875));
        assert_eq!(builtin_spec(ConditionId::SourceImbal).label_ratio, vec![0.1, 0.3, 0.6]);
        let c5 = builtin_spec(ConditionId::Cond5);
        assert_eq!(c5.label_ratio, BALANCED.to_vec());
        assert_eq!(c5.connection, c3.connection);
        let c8 = builtin_spec(ConditionId::Cond8);
        assert_eq!(c8.label_ratio, IMBALANCED.to_vec());
        assert_eq!(c8.connection, builtin_spec(ConditionId::Cond4).connection);
        for c in ConditionId::ALL {
            builtin_spec(c).validate().unwrap();
            assert_eq!(c.name().parse::<ConditionId>().unwrap(), c);
        }
    }

    #[test]
    fn zero_probability_gives_no_edges() {
        let g = generate(&small(0.0, 0.0, 50)).unwrap();
        assert_eq!(g.num_directed_edges(), 0);
    }

    #[test]
    fn certain_intra_edges_give_two_cliques() {
        let g = generate(&small(1.0, 0.0, 10)).unwrap();
        let y = g.require_labels().unwrap();
        for u in 0..10 {
            assert_eq!(g.degree(u).unwrap(), 4);
            assert!(g.neighbors(u).iter().all(|&v| y[v] == y[u]));
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let spec = small(0.1, 0.02, 200);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        assert_ne!(generate(&spec).unwrap(), generate(&spec.clone().with_seed(5)).unwrap());
    }

    #[test]
    fn triangle_pairs_enumerate_in_order() {
        let mut expected = Vec::new();
        for j in 1..40u64 {
            for i in 0..j {
                expected.push((i as usize, j as usize));
            }
        }
        let got: Vec<_> = (0..expected.len() as u64).map(triangle_pair).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn closed_form_rows() {
        let d = expected_neighbor_distribution(&builtin_spec(ConditionId::SourceImbal)).unwrap();
        let expected = [0.001 / 0.00325, 0.00075 / 0.00325, 0.0015 / 0.00325];
        for (a, b) in d.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.get(0, 0) - 0.3077).abs() < 1e-4);
        let c2 = expected_neighbor_distribution(&builtin_spec(ConditionId::Cond2)).unwrap();
        for i in 0..3 {
            for (a, b) in c2.row(i).iter().zip(IMBALANCED) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let flat = small(0.2, 0.2, 10);
        let u = expected_neighbor_distribution(&flat).unwrap();
        assert!(u.max_abs_diff(&ClassMatrix::uniform(2)) < 1e-15);
        assert!(matches!(
            expected_neighbor_distribution(&small(0.0, 0.0, 10)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small(0.1, 0.1, 10);
        s.connection[0][1] = 0.2;
        assert!(generate(&s).is_err());
        let mut s = small(0.1, 0.1, 10);
        s.feature_std = 0.0;
        assert!(generate(&s).is_err());
        let mut s = small(0.1, 0.1, 10);
        s.label_ratio = vec![0.7, 0.7];
        assert!(generate(&s).is_err());
    }
}
