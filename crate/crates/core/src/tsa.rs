//! Test-time structural alignment.
//!
//! Given a pretrained model and an unlabeled target graph, [`adapt`]:
//!
//! 1. refines the unmodified model's predictions into soft pseudo-labels,
//! 2. estimates the target's class-conditional neighbor-label distribution
//!    from confident pseudo-label pairs and reweights each message by the
//!    source/target ratio of its class pair,
//! 3. fits per-layer, degree-conditioned weights on the neighbor path against
//!    the refined hard labels, and
//! 4. refines once more on the realigned forward pass.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::dist::ClassMatrix;
use crate::error::{Error, Result};
use crate::graph::{EdgeWeights, Graph};
use crate::model::{cross_entropy, ModelState, Trainable};
use crate::numerics::{sigmoid, Adam, Tape, Tensor, Var};
use crate::refine::{entropy, refine, EmbeddingSource, RefineMethod, SoftLabels};

/// Nodes whose prediction entropy is at most `ratio · ln|Y|`.
pub fn confident_mask(soft: &SoftLabels, ratio: f64) -> Vec<bool> {
    let threshold = ratio * (soft.num_classes() as f64).ln();
    soft.probs()
        .iter_rows()
        // slack so that ratio = 1 admits exactly uniform rows despite rounding
        .map(|row| entropy(row) <= threshold + 1e-12)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Counting {
    /// One count per edge for its argmax label pair.
    #[default]
    Hard,
    /// Each edge spreads `p_u[i] · p_v[j]` over all label pairs.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub dist: ClassMatrix,
    pub confident: Vec<bool>,
    /// Directed edges with both endpoints confident.
    pub confident_edges: usize,
}

/// Row-normalized counts of pseudo-label pairs over directed edges `u → v`
/// with both endpoints confident, plus `smoothing` in every cell.
pub fn estimate_target_nbr_dist(
    g: &Graph,
    soft: &SoftLabels,
    rho1: f64,
    smoothing: f64,
    counting: Counting,
) -> Result<TargetEstimate> {
    if soft.num_nodes() != g.num_nodes() || soft.num_classes() != g.num_classes() {
        return Err(Error::dim("estimate_target_nbr_dist", "soft labels do not match the graph"));
    }
    if !(0.0..=1.0).contains(&rho1) {
        return Err(Error::Config(format!("entropy gate ratio must lie in [0, 1], got {}", rho1)));
    }
    let k = g.num_classes();
    let confident = confident_mask(soft, rho1);
    let hard = soft.hard();
    let mut counts = ClassMatrix::filled(k, smoothing);
    let mut confident_edges = 0;
    for u in 0..g.num_nodes() {
        if !confident[u] {
            continue;
        }
        for &v in g.neighbors(u) {
            if !confident[v] {
                continue;
            }
            confident_edges += 1;
            match counting {
                Counting::Hard => counts.set(hard[u], hard[v], counts.get(hard[u], hard[v]) + 1.0),
                Counting::Soft => {
                    for i in 0..k {
                        for j in 0..k {
                            counts.set(i, j, counts.get(i, j) + soft.row(u)[i] * soft.row(v)[j]);
                        }
                    }
                }
            }
        }
    }
    counts.normalize_rows();
    Ok(TargetEstimate {
        dist: counts,
        confident,
        confident_edges,
    })
}

/// Elementwise `source / target`, clipped to `clip`.
pub fn build_gamma(source: &ClassMatrix, target: &ClassMatrix, clip: (f64, f64)) -> Result<ClassMatrix> {
    let k = source.num_classes();
    if target.num_classes() != k {
        return Err(Error::dim("build_gamma", "source and target class counts differ"));
    }
    if !(clip.0 <= clip.1) {
        return Err(Error::Config(format!("invalid clip range [{}, {}]", clip.0, clip.1)));
    }
    let mut gamma = ClassMatrix::filled(k, 0.0);
    for i in 0..k {
        for j in 0..k {
            let t = target.get(i, j);
            if !(t > 0.0) {
                return Err(Error::Domain(format!("target neighbor probability ({}, {}) is not positive", i, j)));
            }
            gamma.set(i, j, (source.get(i, j) / t).clamp(clip.0, clip.1));
        }
    }
    Ok(gamma)
}

/// Message `v → u` gets `gamma[ŷ_u][ŷ_v]` when both endpoints are confident
/// and 1 otherwise.
pub fn assign_edge_weights(g: &Graph, gamma: &ClassMatrix, hard: &[usize], confident: &[bool]) -> Result<EdgeWeights> {
    if hard.len() != g.num_nodes() || confident.len() != g.num_nodes() {
        return Err(Error::dim("assign_edge_weights", "labels or mask do not match the graph"));
    }
    let mut w = Vec::with_capacity(g.num_directed_edges());
    for u in 0..g.num_nodes() {
        for &v in g.neighbors(u) {
            w.push(if confident[u] && confident[v] {
                gamma.get(hard[u], hard[v])
            } else {
                1.0
            });
        }
    }
    EdgeWeights::new(g, w)
}

/// `1 → hidden → 1` perceptron with a tanh hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaMlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaLayer {
    pub mlp: AlphaMlp,
    pub bias: Tensor,
}

/// Per-layer neighbor-path weights `α_k(d̃) = sigmoid(mlp_k(d̃)) − 0.5 + b_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub layers: Vec<AlphaLayer>,
}

struct AlphaVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    bias: Var,
}

impl AlphaParams {
    /// Zero perceptrons and unit biases, so every weight starts at exactly 1.
    pub fn init(num_layers: usize, hidden: usize) -> Self {
        let layers = (0..num_layers)
            .map(|_| AlphaLayer {
                mlp: AlphaMlp {
                    w1: Tensor::zeros(1, hidden),
                    b1: Tensor::zeros(1, hidden),
                    w2: Tensor::zeros(hidden, 1),
                    b2: Tensor::zeros(1, 1),
                },
                bias: Tensor::scalar(1.0),
            })
            .collect();
        Self { layers }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn value(&self, layer: usize, degree: f64) -> f64 {
        let l = &self.layers[layer];
        let mut out = l.mlp.b2.data()[0];
        for j in 0..l.mlp.w1.cols() {
            let hidden = (degree * l.mlp.w1.get(0, j) + l.mlp.b1.get(0, j)).tanh();
            out += hidden * l.mlp.w2.get(j, 0);
        }
        sigmoid(out) - 0.5 + l.bias.data()[0]
    }

    /// One `n×1` column of weights per layer, computed exactly as on the tape.
    pub fn columns(&self, degrees: &[f64]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let d = tape.constant(Tensor::column(degrees.to_vec()));
        let cols = Self::evaluate(&mut tape, &vars, d)?;
        Ok(cols.into_iter().map(|c| tape.value(c).clone()).collect())
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend([&mut l.mlp.w1, &mut l.mlp.b1, &mut l.mlp.w2, &mut l.mlp.b2, &mut l.bias]);
        }
        out
    }

    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<AlphaVars> {
        self.layers
            .iter()
            .map(|l| AlphaVars {
                w1: tape.leaf(l.mlp.w1.clone(), trainable),
                b1: tape.leaf(l.mlp.b1.clone(), trainable),
                w2: tape.leaf(l.mlp.w2.clone(), trainable),
                b2: tape.leaf(l.mlp.b2.clone(), trainable),
                bias: tape.leaf(l.bias.clone(), trainable),
            })
            .collect()
    }

    fn evaluate(tape: &mut Tape, vars: &[AlphaVars], degrees: Var) -> Result<Vec<Var>> {
        vars.iter()
            .map(|v| {
                let h = tape.matmul(degrees, v.w1)?;
                let h = tape.add_row(h, v.b1)?;
                let h = tape.tanh(h);
                let o = tape.matmul(h, v.w2)?;
                let o = tape.add_row(o, v.b2)?;
                let s = tape.sigmoid(o);
                let s = tape.add_scalar(s, -0.5);
                tape.add_row(s, v.bias)
            })
            .collect()
    }
}

/// Everything needed for a forward pass on the aligned target graph.
pub struct AlignedGraph<'a> {
    pub graph: &'a Graph,
    pub weights: &'a EdgeWeights,
    /// Log-normalized degree per node.
    pub degrees: &'a [f64],
}

/// Mean cross-entropy between `labels` and the model output with the given
/// neighbor-path weights, restricted to `nodes`, plus its gradient with
/// respect to every α parameter (in `AlphaParams` order).
pub fn alpha_loss(
    model: &ModelState,
    target: &AlignedGraph<'_>,
    alpha: &AlphaParams,
    nodes: &[usize],
    labels: &[usize],
) -> Result<(f64, Vec<Tensor>)> {
    let op = target.graph.mean_operator(target.weights)?;
    let mut tape = Tape::new();
    let model_vars = model.register(&mut tape, Trainable::Nothing);
    let alpha_vars = alpha.register(&mut tape, true);
    let d = tape.constant(Tensor::column(target.degrees.to_vec()));
    let cols = AlphaParams::evaluate(&mut tape, &alpha_vars, d)?;
    let x = tape.constant(target.graph.features().clone());
    let enc = model.encode(&mut tape, &model_vars, &op, x, Some(&cols))?;
    let cls = model.classify(&mut tape, &model_vars, enc.output, model.config.inference_norm)?;
    let loss = cross_entropy(&mut tape, cls.logits, nodes, labels)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Adaptation(format!("alignment loss is {}", value)));
    }
    let mut grads = tape.backward(loss)?;
    let mut out = Vec::new();
    for v in &alpha_vars {
        for var in [v.w1, v.b1, v.w2, v.b2, v.bias] {
            out.push(grads.take(var).ok_or_else(|| Error::Adaptation("missing α gradient".into()))?);
        }
    }
    Ok((value, out))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub losses: Vec<f64>,
    pub selected_nodes: usize,
    pub skipped: bool,
}

/// Full-batch Adam on the cross-entropy between the refined hard labels and
/// the model output, over nodes whose refined entropy is at most
/// `rho2 · ln|Y|`. Only `alpha` changes.
pub fn optimize_alpha(
    model: &ModelState,
    target: &AlignedGraph<'_>,
    alpha: &mut AlphaParams,
    refined: &SoftLabels,
    rho2: f64,
    lr: f64,
    epochs: usize,
) -> Result<AlphaFit> {
    if !(0.0..=1.0).contains(&rho2) {
        return Err(Error::Config(format!("loss filter ratio must lie in [0, 1], got {}", rho2)));
    }
    let hard = refined.hard();
    let nodes: Vec<usize> = confident_mask(refined, rho2)
        .iter()
        .enumerate()
        .filter(|(_, &c)| c)
        .map(|(u, _)| u)
        .collect();
    if nodes.is_empty() {
        return Ok(AlphaFit {
            skipped: true,
            ..AlphaFit::default()
        });
    }
    let labels: Vec<usize> = nodes.iter().map(|&u| hard[u]).collect();
    let mut adam = Adam::new(lr);
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (loss, grads) = alpha_loss(model, target, alpha, &nodes, &labels)?;
        let refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut alpha.params_mut(), &refs)?;
        losses.push(loss);
    }
    Ok(AlphaFit {
        losses,
        selected_nodes: nodes.len(),
        skipped: false,
    })
}

/// Degree reference used to normalize degrees for the α networks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeReference {
    #[default]
    Target,
    Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsaConfig {
    /// Entropy gate for the neighbor-distribution estimate and γ assignment.
    pub rho1: f64,
    /// Entropy filter for the α objective.
    pub rho2: f64,
    pub lr_alpha: f64,
    pub alpha_epochs: usize,
    pub alpha_hidden: usize,
    pub refine: RefineMethod,
    pub embedding: EmbeddingSource,
    pub smoothing: f64,
    pub gamma_clip: (f64, f64),
    pub counting: Counting,
    pub degree_reference: DegreeReference,
    /// Replace the source neighbor distribution by uniform rows.
    pub uniform_source_prior: bool,
    /// Skip message reweighting (all weights 1).
    pub disable_alignment: bool,
    /// Skip fitting the neighbor-path weights (α stays 1).
    pub disable_snr: bool,
}

impl Default for TsaConfig {
    fn default() -> Self {
        Self {
            rho1: 1.0,
            rho2: 1.0,
            lr_alpha: 0.01,
            alpha_epochs: 1,
            alpha_hidden: 16,
            refine: RefineMethod::T3a { support: 20 },
            embedding: EmbeddingSource::default(),
            smoothing: 1.0,
            gamma_clip: (0.0, 10.0),
            counting: Counting::Hard,
            degree_reference: DegreeReference::Target,
            uniform_source_prior: false,
            disable_alignment: false,
            disable_snr: false,
        }
    }
}

impl TsaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{} must lie in [0, 1], got {}", name, v)));
            }
        }
        if !(self.lr_alpha >= 0.0) || !self.lr_alpha.is_finite() {
            return Err(Error::Config(format!("lr_alpha must be finite and >= 0, got {}", self.lr_alpha)));
        }
        if !(self.smoothing > 0.0) {
            return Err(Error::Config("smoothing must be positive".into()));
        }
        if !(self.gamma_clip.0 <= self.gamma_clip.1) || self.gamma_clip.0 < 0.0 {
            return Err(Error::Config("gamma_clip must be an ordered non-negative range".into()));
        }
        self.refine.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaCurve {
    pub layer: usize,
    /// `(d̃, α)` pairs on a fixed degree grid.
    pub points: Vec<(f64, f64)>,
}

/// Accuracy after each stage, over labeled target nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageAccuracy {
    pub unadapted: f64,
    pub first_refinement: f64,
    pub aligned: f64,
    pub final_refinement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    pub gamma: ClassMatrix,
    pub target_nbr_dist: ClassMatrix,
    /// Fraction of nodes passing the entropy gate.
    pub gate_coverage: f64,
    /// Fraction of directed messages whose weight came from γ.
    pub reweighted_fraction: f64,
    pub alpha: AlphaParams,
    pub alpha_curves: Vec<AlphaCurve>,
    pub alpha_fit: AlphaFit,
    pub accuracy: Option<StageAccuracy>,
    /// Model parameters mutated by refinement.
    pub mutated: Vec<String>,
    pub warnings: Vec<String>,
}

fn labeled_accuracy(g: &Graph, pred: &[usize]) -> Option<f64> {
    let (hits, total) = g
        .labels()
        .iter()
        .zip(pred)
        .filter_map(|(y, p)| y.map(|y| (y == *p) as usize))
        .fold((0, 0), |(h, t), x| (h + x, t + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

const CURVE_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Full adaptation of `model` to `g`. The model is copied; the caller's
/// instance is never modified.
pub fn adapt(model: &ModelState, g: &Graph, cfg: &TsaConfig) -> Result<(SoftLabels, AdaptTrace)> {
    cfg.validate()?;
    let stats = model.require_source_stats()?;
    if g.num_classes() != model.num_classes() {
        return Err(Error::dim("adapt", "graph and model disagree on the class count"));
    }
    let mut m = model.clone();
    let mut warnings = Vec::new();
    let mut mutated: Vec<String> = Vec::new();

    let unit = EdgeWeights::uniform(g);
    let base = m.forward(g, &unit, None)?;
    let first = refine(&mut m, &base, &cfg.refine, cfg.embedding)?;
    mutated.extend(first.mutated.iter().map(|s| s.to_string()));
    let soft = first.soft;

    let estimate = estimate_target_nbr_dist(g, &soft, cfg.rho1, cfg.smoothing, cfg.counting)?;
    if estimate.confident_edges == 0 {
        let msg = "no edge has two confident endpoints; target neighbor distribution is uniform".to_string();
        warn!("{}", msg);
        warnings.push(msg);
    }
    let source_dist = if cfg.uniform_source_prior {
        ClassMatrix::uniform(g.num_classes())
    } else {
        stats.nbr_dist.clone()
    };
    let gamma = build_gamma(&source_dist, &estimate.dist, cfg.gamma_clip)?;
    let weights = if cfg.disable_alignment {
        unit.clone()
    } else {
        assign_edge_weights(g, &gamma, &soft.hard(), &estimate.confident)?
    };
    let reweighted = (0..g.num_nodes())
        .filter(|&u| estimate.confident[u])
        .map(|u| g.neighbors(u).iter().filter(|&&v| estimate.confident[v]).count())
        .sum::<usize>();

    let reference = match cfg.degree_reference {
        DegreeReference::Target => None,
        DegreeReference::Source => Some(stats.max_degree),
    };
    let degrees = match g.log_normalized_degrees(reference) {
        Ok(d) => d,
        Err(Error::Degenerate(msg)) => {
            warnings.push(format!("{}; degree input set to 0", msg));
            vec![0.0; g.num_nodes()]
        }
        Err(e) => return Err(e),
    };
    let target = AlignedGraph {
        graph: g,
        weights: &weights,
        degrees: &degrees,
    };
    let mut alpha = AlphaParams::init(m.num_layers(), cfg.alpha_hidden);
    let alpha_fit = if cfg.disable_snr {
        AlphaFit {
            skipped: true,
            ..AlphaFit::default()
        }
    } else {
        let fit = optimize_alpha(&m, &target, &mut alpha, &soft, cfg.rho2, cfg.lr_alpha, cfg.alpha_epochs)?;
        if fit.skipped {
            let msg = "every node was filtered from the alignment loss; α left at 1".to_string();
            warn!("{}", msg);
            warnings.push(msg);
        }
        fit
    };
    debug!("α fit: {:?}", alpha_fit);

    let cols = alpha.columns(&degrees)?;
    let aligned = m.forward(g, &weights, Some(&cols))?;
    let last = refine(&mut m, &aligned, &cfg.refine, cfg.embedding)?;
    for name in &last.mutated {
        if !mutated.iter().any(|m| m == name) {
            mutated.push(name.to_string());
        }
    }

    let accuracy = labeled_accuracy(g, &base.predictions()).map(|unadapted| StageAccuracy {
        unadapted,
        first_refinement: labeled_accuracy(g, &soft.hard()).unwrap_or(0.0),
        aligned: labeled_accuracy(g, &aligned.predictions()).unwrap_or(0.0),
        final_refinement: labeled_accuracy(g, &last.soft.hard()).unwrap_or(0.0),
    });
    let alpha_curves = (0..alpha.num_layers())
        .map(|k| AlphaCurve {
            layer: k + 1,
            points: CURVE_GRID.iter().map(|&d| (d, alpha.value(k, d))).collect(),
        })
        .collect();
    let trace = AdaptTrace {
        gamma,
        target_nbr_dist: estimate.dist,
        gate_coverage: estimate.confident.iter().filter(|&&c| c).count() as f64 / g.num_nodes().max(1) as f64,
        reweighted_fraction: if cfg.disable_alignment {
            0.0
        } else {
            reweighted as f64 / g.num_directed_edges().max(1) as f64
        },
        alpha,
        alpha_curves,
        alpha_fit,
        accuracy,
        mutated,
        warnings,
    };
    Ok((last.soft, trace))
}
