//! Shift metrics, representation signal-to-noise profiles and evaluation
//! scores.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::ClassMatrix;
use crate::error::{Error, Result};
use crate::graph::{split::exact_counts, EdgeWeights, Graph};
use crate::model::{compute_source_stats, ModelState};
use crate::numerics::Tensor;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("{} is not a probability vector", what)));
    }
    Ok(())
}

/// Total-variation distance `½ Σ |p_j − q_j|`.
pub fn label_shift_tv(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("label_shift_tv", format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution(p, "first distribution")?;
    check_distribution(q, "second distribution")?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn check_pair(source: &ClassMatrix, target: &ClassMatrix, target_labels: &[f64]) -> Result<()> {
    let k = source.num_classes();
    if target.num_classes() != k || target_labels.len() != k {
        return Err(Error::dim("shift metric", "class counts disagree"));
    }
    check_distribution(target_labels, "target label distribution")
}

/// Conditional structure shift: neighbor-distribution TV per center class,
/// weighted by the target class frequencies.
pub fn css(source: &ClassMatrix, target: &ClassMatrix, target_labels: &[f64]) -> Result<f64> {
    check_pair(source, target, target_labels)?;
    Ok(source
        .row_tv(target)
        .iter()
        .zip(target_labels)
        .map(|(tv, w)| w * tv)
        .sum())
}

/// `Σ_j P_T(j) · max_k |1 − P_T(k|j) / P_S(k|j)|`. Zero source cells are a
/// domain error; smooth the source rows first if they can occur.
pub fn nbr_bound_term(source: &ClassMatrix, target: &ClassMatrix, target_labels: &[f64]) -> Result<f64> {
    check_pair(source, target, target_labels)?;
    let k = source.num_classes();
    let mut total = 0.0;
    for j in 0..k {
        let mut worst: f64 = 0.0;
        for c in 0..k {
            let s = source.get(j, c);
            if !(s > 0.0) {
                return Err(Error::Domain(format!("source neighbor probability ({}, {}) is zero", j, c)));
            }
            worst = worst.max((1.0 - target.get(j, c) / s).abs());
        }
        total += target_labels[j] * worst;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    /// Largest per-class error over classes present in the labels.
    pub ber: f64,
    /// `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
}

impl BerReport {
    pub fn missing_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_none())
            .map(|(c, _)| c)
            .collect()
    }
}

/// Balanced error rate `max_j P(ŷ ≠ y | y = j)`.
pub fn ber(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<BerReport> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("ber", "predictions and labels differ in length"));
    }
    let mut errors = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(Error::Index {
                index: y,
                len: num_classes,
                what: "classes",
            });
        }
        counts[y] += 1;
        errors[y] += (p != y) as usize;
    }
    let per_class: Vec<Option<f64>> = errors
        .iter()
        .zip(&counts)
        .map(|(&e, &n)| (n > 0).then(|| e as f64 / n as f64))
        .collect();
    let ber = per_class.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    Ok(BerReport { ber, per_class })
}

/// Signal-to-noise ratio of a set of representations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Snr {
    Finite(f64),
    /// Zero intra-class spread with positive inter-class spread.
    Infinite,
    /// Both spreads are zero.
    Undefined,
}

impl Snr {
    pub fn finite(self) -> Option<f64> {
        match self {
            Snr::Finite(v) => Some(v),
            _ => None,
        }
    }
}

/// Inter-class over intra-class variance:
///
/// ```text
/// inter = Σ_i n_i ‖μ_i − μ*‖² / |Y|
/// intra = Σ_i Σ_{h ∈ class i} ‖h − μ_i‖² / |Y|
/// ```
///
/// where `μ*` is the mean of all rows and `|Y|` counts the classes present.
pub fn snr(embeddings: &Tensor, labels: &[usize]) -> Result<Snr> {
    if embeddings.rows() != labels.len() {
        return Err(Error::dim("snr", "embeddings and labels differ in length"));
    }
    let d = embeddings.cols();
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    let mut global = vec![0.0; d];
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        counts[y] += 1;
        for j in 0..d {
            sums[y][j] += row[j];
            global[j] += row[j];
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Undefined("signal-to-noise ratio needs at least two classes".into()));
    }
    let n = labels.len() as f64;
    global.iter_mut().for_each(|g| *g /= n);
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|x| if c > 0 { x / c as f64 } else { 0.0 }).collect())
        .collect();
    let classes = present as f64;
    let mut inter = 0.0;
    for (mean, &c) in means.iter().zip(&counts) {
        let dist: f64 = mean.iter().zip(&global).map(|(a, b)| (a - b) * (a - b)).sum();
        inter += c as f64 * dist;
    }
    inter /= classes;
    let mut intra = 0.0;
    for (row, &y) in embeddings.iter_rows().zip(labels) {
        intra += row.iter().zip(&means[y]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    intra /= classes;
    Ok(if intra > 0.0 {
        Snr::Finite(inter / intra)
    } else if inter > 0.0 {
        Snr::Infinite
    } else {
        Snr::Undefined
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrEntry {
    /// 1-based encoder layer.
    pub layer: usize,
    /// 0-based degree bin, ascending degree.
    pub bin: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub nodes: usize,
    pub aggregated: Option<Snr>,
    pub self_path: Option<Snr>,
    /// Aggregated-path SNR over self-path SNR, when both are finite and the
    /// denominator positive.
    pub ratio: Option<f64>,
    pub flag: Option<String>,
}

/// Nodes sorted by degree (stable), cut into `bins` groups of equal size.
pub fn degree_bins(degrees: &[usize], bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by_key(|&u| degrees[u]);
    let bins = bins.max(1);
    let sizes = exact_counts(degrees.len(), &vec![1.0 / bins as f64; bins]);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for s in sizes {
        out.push(order[start..start + s].to_vec());
        start += s;
    }
    out
}

fn rows_of(t: &Tensor, nodes: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(nodes.len(), t.cols());
    for (i, &u) in nodes.iter().enumerate() {
        out.row_mut(i).copy_from_slice(t.row(u));
    }
    out
}

/// Per layer and equal-count degree bin, the SNR of the neighbor path
/// `W_nbr·agg + b_nbr` divided by that of the self path `W_self·h + b_self`,
/// both taken before mixing, over ground-truth labels.
pub fn snr_profile(model: &ModelState, g: &Graph, weights: &EdgeWeights, num_bins: usize) -> Result<Vec<SnrEntry>> {
    let labels = g.require_labels()?;
    let out = model.forward(g, weights, None)?;
    let degrees = g.degrees();
    let bins = degree_bins(&degrees, num_bins);
    let mut entries = Vec::new();
    for (k, (self_part, nbr_part)) in out.self_parts.iter().zip(&out.nbr_parts).enumerate() {
        for (b, nodes) in bins.iter().enumerate() {
            let bin_labels: Vec<usize> = nodes.iter().map(|&u| labels[u]).collect();
            let mut entry = SnrEntry {
                layer: k + 1,
                bin: b,
                min_degree: nodes.iter().map(|&u| degrees[u]).min().unwrap_or(0),
                max_degree: nodes.iter().map(|&u| degrees[u]).max().unwrap_or(0),
                nodes: nodes.len(),
                aggregated: None,
                self_path: None,
                ratio: None,
                flag: None,
            };
            let agg = snr(&rows_of(nbr_part, nodes), &bin_labels);
            let own = snr(&rows_of(self_part, nodes), &bin_labels);
            match (agg, own) {
                (Ok(a), Ok(s)) => {
                    entry.aggregated = Some(a);
                    entry.self_path = Some(s);
                    match (a.finite(), s.finite()) {
                        (Some(x), Some(y)) if y > 0.0 => entry.ratio = Some(x / y),
                        _ => entry.flag = Some("non-finite or zero SNR".into()),
                    }
                }
                (Err(e), _) | (_, Err(e)) => entry.flag = Some(e.to_string()),
            }
            entries.push(entry);
        }
    }
    Ok(entries)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    /// F1 with class 1 as the positive class.
    F1Binary,
    F1Macro,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "f1_binary" => Ok(Metric::F1Binary),
            "f1_macro" => Ok(Metric::F1Macro),
            other => Err(Error::Config(format!("unknown metric '{}'", other))),
        }
    }
}

fn f1_for(predictions: &[usize], labels: &[usize], class: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

pub fn evaluate(predictions: &[usize], labels: &[usize], metric: Metric) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("evaluate", "predictions and labels differ in length"));
    }
    if labels.is_empty() {
        return Err(Error::Degenerate("evaluation over zero nodes".into()));
    }
    Ok(match metric {
        Metric::Accuracy => {
            predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
        }
        Metric::F1Binary => f1_for(predictions, labels, 1),
        Metric::F1Macro => {
            let mut classes: Vec<usize> = predictions.iter().chain(labels).copied().collect();
            classes.sort_unstable();
            classes.dedup();
            classes.iter().map(|&c| f1_for(predictions, labels, c)).sum::<f64>() / classes.len() as f64
        }
    })
}

/// Mean over non-isolated nodes of the fraction of same-label neighbors.
pub fn node_homophily(g: &Graph) -> Result<f64> {
    let labels = g.require_labels()?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for u in 0..g.num_nodes() {
        let nb = g.neighbors(u);
        if nb.is_empty() {
            continue;
        }
        total += nb.iter().filter(|&&v| labels[v] == labels[u]).count() as f64 / nb.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::Degenerate("graph has no edges".into()));
    }
    Ok(total / counted as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub css: f64,
    pub label_tv: f64,
    pub nbr_bound_term: f64,
    /// Set when the source neighbor rows had zero cells and were smoothed
    /// with one pseudo-count per cell before computing `nbr_bound_term`.
    pub nbr_bound_smoothed: bool,
    pub source_nbr_dist: ClassMatrix,
    pub target_nbr_dist: ClassMatrix,
    pub source_homophily: f64,
    pub target_homophily: f64,
    /// Balanced error of the model on the source graph, when a model is given.
    pub ber_source: Option<f64>,
    pub snr_profile: Vec<SnrEntry>,
}

fn smoothed_rows(g: &Graph) -> ClassMatrix {
    let k = g.num_classes();
    let mut counts = ClassMatrix::filled(k, 1.0);
    for u in 0..g.num_nodes() {
        let Some(yu) = g.labels()[u] else { continue };
        for &v in g.neighbors(u) {
            if let Some(yv) = g.labels()[v] {
                counts.set(yu, yv, counts.get(yu, yv) + 1.0);
            }
        }
    }
    counts.normalize_rows();
    counts
}

/// Ground-truth shift metrics between two labeled graphs, plus the model's
/// source error and SNR profile when a model is supplied.
pub fn shift_report(source: &Graph, target: &Graph, model: Option<&ModelState>, num_bins: usize) -> Result<ShiftReport> {
    if source.num_classes() != target.num_classes() {
        return Err(Error::dim("shift_report", "graphs disagree on the class count"));
    }
    source.require_labels()?;
    target.require_labels()?;
    let s = compute_source_stats(source, source.labels())?;
    let t = compute_source_stats(target, target.labels())?;
    let target_labels = target.label_distribution();
    let (nbr_bound_term, nbr_bound_smoothed) = match nbr_bound_term(&s.nbr_dist, &t.nbr_dist, &target_labels) {
        Ok(v) => (v, false),
        Err(Error::Domain(_)) => (nbr_bound_term(&smoothed_rows(source), &t.nbr_dist, &target_labels)?, true),
        Err(e) => return Err(e),
    };
    let (ber_source, snr_profile) = match model {
        Some(m) => {
            let unit = EdgeWeights::uniform(source);
            let pred = m.forward(source, &unit, None)?.predictions();
            let report = ber(&pred, &source.require_labels()?, source.num_classes())?;
            (Some(report.ber), snr_profile(m, source, &unit, num_bins)?)
        }
        None => (None, Vec::new()),
    };
    Ok(ShiftReport {
        css: css(&s.nbr_dist, &t.nbr_dist, &target_labels)?,
        label_tv: label_shift_tv(&s.label_dist, &target_labels)?,
        nbr_bound_term,
        nbr_bound_smoothed,
        source_nbr_dist: s.nbr_dist,
        target_nbr_dist: t.nbr_dist,
        source_homophily: node_homophily(source)?,
        target_homophily: node_homophily(target)?,
        ber_source,
        snr_profile,
    })
}

/// CSV with columns `node, label, degree, e0, e1, ...`.
pub fn embeddings_csv(g: &Graph, embeddings: &Tensor) -> Result<String> {
    if embeddings.rows() != g.num_nodes() {
        return Err(Error::dim("embeddings_csv", "one embedding row per node expected"));
    }
    let mut out = String::from("node,label,degree");
    for j in 0..embeddings.cols() {
        let _ = write!(out, ",e{}", j);
    }
    out.push('\n');
    for u in 0..g.num_nodes() {
        let label = g.labels()[u].map_or(String::new(), |y| y.to_string());
        let _ = write!(out, "{},{},{}", u, label, g.neighbors(u).len());
        for v in embeddings.row(u) {
            let _ = write!(out, ",{}", v);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embeddings_csv(path: impl AsRef<Path>, g: &Graph, embeddings: &Tensor) -> Result<()> {
    fs::write(path, embeddings_csv(g, embeddings)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_examples() {
        let third = [1.0 / 3.0; 3];
        assert!((label_shift_tv(&[0.1, 0.3, 0.6], &third).unwrap() - 0.26666666666666666).abs() < 1e-12);
        assert_eq!(label_shift_tv(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(label_shift_tv(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn css_swap_example() {
        let s = ClassMatrix::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
        let t = ClassMatrix::new(vec![vec![0.2, 0.8], vec![0.8, 0.2]]).unwrap();
        assert!((css(&s, &t, &[0.5, 0.5]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(css(&s, &s, &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn bound_term_examples() {
        let s = ClassMatrix::new(vec![vec![0.25, 0.75], vec![0.4, 0.6]]).unwrap();
        let t = ClassMatrix::new(vec![vec![0.5, 0.5], vec![0.8, 0.2]]).unwrap();
        assert!((nbr_bound_term(&s, &t, &[0.3, 0.7]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nbr_bound_term(&s, &s, &[0.3, 0.7]).unwrap(), 0.0);
        let z = ClassMatrix::new(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(nbr_bound_term(&z, &t, &[0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn ber_examples() {
        let labels = [0, 1, 2, 0, 1, 2];
        assert_eq!(ber(&labels, &labels, 3).unwrap().ber, 0.0);
        assert_eq!(ber(&[0; 6], &labels, 3).unwrap().ber, 1.0);
        let r = ber(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(r.missing_classes(), vec![1, 2]);
    }

    #[test]
    fn snr_sentinels_and_hand_value() {
        let same = Tensor::full(4, 2, 1.0);
        assert_eq!(snr(&same, &[0, 0, 1, 1]).unwrap(), Snr::Undefined);
        let pm = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(snr(&pm, &[0, 0, 1]).unwrap(), Snr::Infinite);
        assert!(matches!(snr(&pm, &[0, 0, 0]), Err(Error::Undefined(_))));
        // class means 1 and 4 on a line, global mean 2.5; inter = (3·2.25 + 3·2.25)/2,
        // intra = (1+0+1 + 1+0+1)/2
        let pts = Tensor::column(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let v = snr(&pts, &[0, 0, 0, 1, 1, 1]).unwrap().finite().unwrap();
        assert!((v - 6.75 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn metric_examples() {
        let p = [1, 1, 0, 0];
        let y = [1, 0, 0, 1];
        assert_eq!(evaluate(&p, &y, Metric::F1Binary).unwrap(), 0.5);
        assert_eq!(evaluate(&p, &y, Metric::Accuracy).unwrap(), 0.5);
        assert_eq!(evaluate(&y, &y, Metric::F1Macro).unwrap(), 1.0);
        assert!(evaluate(&p, &y[..3], Metric::Accuracy).is_err());
    }

    #[test]
    fn bins_have_equal_sizes() {
        let b = degree_bins(&[5, 1, 3, 2, 4, 0, 7], 3);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 7);
        assert_eq!(b[0], vec![5, 1, 3]);
        assert_eq!(b[2], vec![0, 6]);
    }
}
