//! Decision-boundary refinement on frozen embeddings: entropy-minimizing
//! batch-norm adaptation (TENT), prototype adjustment (T3A) and Laplacian
//! label smoothing (LAME).

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BnMode, ForwardOutput, ModelState, Trainable};
use crate::numerics::{argmax, softmax_row, Adam, Tape, Tensor};

/// Shannon entropy in nats with `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Row-stochastic per-node class probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftLabels {
    probs: Tensor,
}

impl SoftLabels {
    pub fn new(probs: Tensor) -> Result<Self> {
        if probs.cols() == 0 {
            return Err(Error::dim("soft labels", "zero classes"));
        }
        for (u, row) in probs.iter_rows().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric(format!("soft label row {} is not a distribution", u)));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn into_tensor(self) -> Tensor {
        self.probs
    }

    pub fn num_nodes(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, u: usize) -> &[f64] {
        self.probs.row(u)
    }

    /// Argmax labels, lowest class on ties.
    pub fn hard(&self) -> Vec<usize> {
        self.probs.argmax_rows()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.probs.iter_rows().map(entropy).collect()
    }
}

/// Which representation T3A and LAME operate on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    /// Post-activation features entering the classifier's last linear layer.
    #[default]
    Penultimate,
    /// Encoder output.
    Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineKind {
    Tent,
    T3a,
    Lame,
}

impl RefineKind {
    pub fn name(self) -> &'static str {
        match self {
            RefineKind::Tent => "tent",
            RefineKind::T3a => "t3a",
            RefineKind::Lame => "lame",
        }
    }
}

impl fmt::Display for RefineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RefineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tent" => Ok(RefineKind::Tent),
            "t3a" => Ok(RefineKind::T3a),
            "lame" => Ok(RefineKind::Lame),
            other => Err(Error::Config(format!("unknown refinement method '{}'", other))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", deny_unknown_fields)]
pub enum RefineMethod {
    Tent { lr: f64, steps: usize },
    T3a { support: usize },
    Lame { k_nn: usize, iters: usize },
}

impl RefineMethod {
    pub fn kind(&self) -> RefineKind {
        match self {
            RefineMethod::Tent { .. } => RefineKind::Tent,
            RefineMethod::T3a { .. } => RefineKind::T3a,
            RefineMethod::Lame { .. } => RefineKind::Lame,
        }
    }

    pub fn default_for(kind: RefineKind) -> Self {
        match kind {
            RefineKind::Tent => RefineMethod::Tent { lr: 0.01, steps: 1 },
            RefineKind::T3a => RefineMethod::T3a { support: 20 },
            RefineKind::Lame => RefineMethod::Lame { k_nn: 5, iters: 100 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RefineMethod::Tent { lr, .. } if !(lr >= 0.0) || !lr.is_finite() => {
                Err(Error::Config(format!("TENT learning rate must be finite and >= 0, got {}", lr)))
            }
            RefineMethod::T3a { support: 0 } => Err(Error::Config("T3A support size must be >= 1".into())),
            RefineMethod::Lame { k_nn: 0, .. } => Err(Error::Config("LAME needs k_nn >= 1".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RefineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefineMethod::Tent { lr, steps } => write!(f, "tent(lr={}, steps={})", lr, steps),
            RefineMethod::T3a { support } => write!(f, "t3a(M={})", support),
            RefineMethod::Lame { k_nn, iters } => write!(f, "lame(k={}, iters={})", k_nn, iters),
        }
    }
}

/// Result of one refinement call.
#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub soft: SoftLabels,
    /// Names of model parameters that were modified in place.
    pub mutated: Vec<&'static str>,
}

/// Runs `method` on the outputs of a forward pass. Only TENT touches the
/// model, and then only the batch-norm scale and shift.
pub fn refine(
    model: &mut ModelState,
    forward: &ForwardOutput,
    method: &RefineMethod,
    embedding: EmbeddingSource,
) -> Result<RefineOutcome> {
    method.validate()?;
    let pick = |src: EmbeddingSource| match src {
        EmbeddingSource::Penultimate => &forward.penultimate,
        EmbeddingSource::Encoder => &forward.embeddings,
    };
    match *method {
        RefineMethod::Tent { lr, steps } => Ok(RefineOutcome {
            soft: refine_tent(model, &forward.embeddings, steps, lr)?,
            mutated: vec!["bn_scale", "bn_shift", "inference_norm"],
        }),
        RefineMethod::T3a { support } => {
            let prototypes = match embedding {
                EmbeddingSource::Penultimate => model.classifier.class_weight_rows(),
                EmbeddingSource::Encoder => soft_centroids(&forward.probs, &forward.embeddings),
            };
            Ok(RefineOutcome {
                soft: refine_t3a(&prototypes, pick(embedding), support)?,
                mutated: Vec::new(),
            })
        }
        RefineMethod::Lame { k_nn, iters } => Ok(RefineOutcome {
            soft: refine_lame(&SoftLabels::new(forward.probs.clone())?, pick(embedding), k_nn, iters)?,
            mutated: Vec::new(),
        }),
    }
}

/// Probability-weighted class means of `embeddings`, one row per class.
pub fn soft_centroids(probs: &Tensor, embeddings: &Tensor) -> Tensor {
    let (k, d) = (probs.cols(), embeddings.cols());
    let mut out = Tensor::zeros(k, d);
    let mut mass = vec![0.0; k];
    for (p, z) in probs.iter_rows().zip(embeddings.iter_rows()) {
        for c in 0..k {
            mass[c] += p[c];
            for (o, &x) in out.row_mut(c).iter_mut().zip(z) {
                *o += p[c] * x;
            }
        }
    }
    for (c, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            out.row_mut(c).iter_mut().for_each(|o| *o /= m);
        }
    }
    out
}

/// Mean prediction entropy of the classifier on `embeddings`, normalized with
/// their own batch statistics, and its gradient with respect to the
/// batch-norm affine parameters.
pub fn tent_loss(model: &ModelState, embeddings: &Tensor) -> Result<(f64, Tensor, Tensor)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, Trainable::BnAffine);
    let h = tape.constant(embeddings.clone());
    let cls = model.classify(&mut tape, &vars, h, BnMode::Batch)?;
    let loss = entropy_loss(&mut tape, cls.logits)?;
    let value = tape.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Adaptation(format!("TENT loss is {}", value)));
    }
    let mut grads = tape.backward(loss)?;
    let gs = grads.take(vars.bn_scale).ok_or_else(|| Error::Adaptation("no scale gradient".into()))?;
    let gb = grads.take(vars.bn_shift).ok_or_else(|| Error::Adaptation("no shift gradient".into()))?;
    Ok((value, gs, gb))
}

/// Mean over rows of `-Σ p log p` for `p = softmax(logits)`.
pub fn entropy_loss(tape: &mut Tape, logits: crate::numerics::Var) -> Result<crate::numerics::Var> {
    let p = tape.softmax(logits);
    let logp = tape.log_softmax(logits);
    let plogp = tape.mul(p, logp)?;
    let per_node = tape.sum_cols(plogp);
    let mean = tape.mean(per_node)?;
    Ok(tape.scale(mean, -1.0))
}

/// Switches the classifier to target batch statistics, then takes `steps`
/// full-batch Adam steps on the mean prediction entropy, updating only the
/// batch-norm scale and shift. Returns the post-update predictions.
pub fn refine_tent(model: &mut ModelState, embeddings: &Tensor, steps: usize, lr: f64) -> Result<SoftLabels> {
    if !(lr >= 0.0) {
        return Err(Error::Config(format!("TENT learning rate must be >= 0, got {}", lr)));
    }
    model.config.inference_norm = BnMode::Batch;
    let mut adam = Adam::new(lr);
    for _ in 0..steps {
        let (_, gs, gb) = tent_loss(model, embeddings)?;
        let c = &mut model.classifier;
        adam.step(&mut [&mut c.bn_scale, &mut c.bn_shift], &[&gs, &gb])?;
    }
    let (_, probs) = model.classify_embeddings(embeddings)?;
    SoftLabels::new(probs)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// Streaming T3A. Each class keeps a support set seeded with its initial
/// prototype row. Nodes are visited in ascending order and scored by the dot
/// product with each class prototype, the normalized sum of the class's
/// unit-length support entries. The node then joins the predicted class's
/// support, which is trimmed to its `support` lowest-entropy entries. A
/// node's output is its prediction before its own insertion.
pub fn refine_t3a(initial_prototypes: &Tensor, embeddings: &Tensor, support: usize) -> Result<SoftLabels> {
    if support == 0 {
        return Err(Error::Config("T3A support size must be >= 1".into()));
    }
    if initial_prototypes.cols() != embeddings.cols() {
        return Err(Error::dim(
            "refine_t3a",
            format!(
                "prototypes have width {}, embeddings {}",
                initial_prototypes.cols(),
                embeddings.cols()
            ),
        ));
    }
    let k = initial_prototypes.rows();

    struct Entry {
        direction: Vec<f64>,
        entropy: f64,
    }
    let mut sets: Vec<Vec<Entry>> = (0..k)
        .map(|c| {
            let w = initial_prototypes.row(c);
            let scores: Vec<f64> = (0..k).map(|j| dot(w, initial_prototypes.row(j))).collect();
            vec![Entry {
                direction: unit(w),
                entropy: entropy(&softmax_row(&scores)),
            }]
        })
        .collect();
    let mut prototypes: Vec<Vec<f64>> = sets.iter().map(|s| s[0].direction.clone()).collect();

    let mut out = Tensor::zeros(embeddings.rows(), k);
    for (u, z) in embeddings.iter_rows().enumerate() {
        let scores: Vec<f64> = prototypes.iter().map(|p| dot(z, p)).collect();
        let p = softmax_row(&scores);
        let c = argmax(&scores);
        out.row_mut(u).copy_from_slice(&p);

        let set = &mut sets[c];
        set.push(Entry {
            direction: unit(z),
            entropy: entropy(&p),
        });
        if set.len() > support {
            // drop the highest-entropy entry; among equals the most recent goes
            let mut worst = 0;
            for (i, e) in set.iter().enumerate() {
                if e.entropy >= set[worst].entropy {
                    worst = i;
                }
            }
            set.remove(worst);
        }
        let mut sum = vec![0.0; z.len()];
        for e in set.iter() {
            for (x, &v) in sum.iter_mut().zip(&e.direction) {
                *x += v;
            }
        }
        prototypes[c] = unit(&sum);
    }
    SoftLabels::new(out)
}

/// Symmetric k-nearest-neighbor affinity under cosine similarity:
/// `W = (A + Aᵀ) / 2` where `A[u][v] = max(cos(z_u, z_v), 0)` for the `k`
/// most similar `v ≠ u` (lower index first on ties). Rows are sparse.
pub fn knn_affinity(embeddings: &Tensor, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = embeddings.rows();
    let norms: Vec<f64> = embeddings.iter_rows().map(|r| dot(r, r).sqrt()).collect();
    let mut directed: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut sims = Vec::with_capacity(n);
    for u in 0..n {
        sims.clear();
        let zu = embeddings.row(u);
        for v in 0..n {
            if v == u {
                continue;
            }
            let denom = norms[u] * norms[v];
            let s = if denom > 0.0 { dot(zu, embeddings.row(v)) / denom } else { 0.0 };
            sims.push((v, s));
        }
        let take = k.min(sims.len());
        if take > 0 && take < sims.len() {
            sims.select_nth_unstable_by(take - 1, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        let mut row: Vec<(usize, f64)> = sims[..take]
            .iter()
            .filter(|&&(_, s)| s > 0.0)
            .map(|&(v, s)| (v, s))
            .collect();
        row.sort_by_key(|&(v, _)| v);
        directed.push(row);
    }
    let mut sym: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    for (u, row) in directed.iter().enumerate() {
        for &(v, s) in row {
            *sym[u].entry(v).or_insert(0.0) += 0.5 * s;
            *sym[v].entry(u).or_insert(0.0) += 0.5 * s;
        }
    }
    sym.into_iter().map(|m| m.into_iter().collect()).collect()
}

/// Fixed-point iteration `z_u ← softmax(log p_u + Σ_v W_uv z_v)` started at
/// `z = p`, with simultaneous updates. Stops after `iters` sweeps or once the
/// largest entry change drops below 1e-6.
pub fn lame_iterate(prior: &SoftLabels, affinity: &[Vec<(usize, f64)>], iters: usize) -> Result<SoftLabels> {
    let n = prior.num_nodes();
    if affinity.len() != n {
        return Err(Error::dim("lame", format!("{} affinity rows for {} nodes", affinity.len(), n)));
    }
    let k = prior.num_classes();
    let log_p: Vec<Vec<f64>> = prior
        .probs()
        .iter_rows()
        .map(|r| r.iter().map(|&p| p.max(f64::MIN_POSITIVE).ln()).collect())
        .collect();
    let mut z = prior.probs().clone();
    let mut prev_change = f64::INFINITY;
    for it in 0..iters {
        let mut next = Tensor::zeros(n, k);
        let mut change: f64 = 0.0;
        let mut logits = vec![0.0; k];
        for u in 0..n {
            logits.copy_from_slice(&log_p[u]);
            for &(v, w) in &affinity[u] {
                for (l, &zv) in logits.iter_mut().zip(z.row(v)) {
                    *l += w * zv;
                }
            }
            let row = softmax_row(&logits);
            for (a, b) in row.iter().zip(z.row(u)) {
                change = change.max((a - b).abs());
            }
            next.row_mut(u).copy_from_slice(&row);
        }
        z = next;
        if it >= 2 && change > prev_change + 1e-12 {
            warn!("LAME change grew at iteration {}: {:.3e} > {:.3e}", it + 1, change, prev_change);
        }
        prev_change = change;
        if change < 1e-6 {
            break;
        }
    }
    if !z.is_finite() {
        return Err(Error::Numeric("LAME iteration".into()));
    }
    SoftLabels::new(z)
}

pub fn refine_lame(soft: &SoftLabels, embeddings: &Tensor, k_nn: usize, iters: usize) -> Result<SoftLabels> {
    if k_nn == 0 {
        return Err(Error::Config("LAME needs k_nn >= 1".into()));
    }
    if embeddings.rows() != soft.num_nodes() {
        return Err(Error::dim("refine_lame", "embeddings and soft labels disagree on node count"));
    }
    lame_iterate(soft, &knn_affinity(embeddings, k_nn), iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::path3;
    use crate::graph::EdgeWeights;
    use crate::model::ModelConfig;

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[1.0 / 3.0; 3]) - 3f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.5, 0.0]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_labels_reject_bad_rows() {
        assert!(SoftLabels::new(Tensor::from_rows(&[vec![0.5, 0.6]]).unwrap()).is_err());
        assert!(SoftLabels::new(Tensor::from_rows(&[vec![1.5, -0.5]]).unwrap()).is_err());
    }

    #[test]
    fn refine_kind_parsing() {
        assert_eq!("T3A".parse::<RefineKind>().unwrap(), RefineKind::T3a);
        assert!(matches!("sar".parse::<RefineKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn t3a_dominant_prototype() {
        let protos = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let emb = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        assert_eq!(refine_t3a(&protos, &emb, 5).unwrap().hard(), vec![0]);
    }

    #[test]
    fn t3a_first_node_uses_initial_rows() {
        let protos = Tensor::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let emb = Tensor::from_rows(&[vec![0.5, 3.0], vec![-2.0, 0.0]]).unwrap();
        let out = refine_t3a(&protos, &emb, 1).unwrap();
        let expect = softmax_row(&[0.5, -0.5]);
        assert!((out.row(0)[0] - expect[0]).abs() < 1e-15);
        assert_eq!(out.hard(), vec![0, 1]);
    }

    #[test]
    fn lame_without_neighbors_is_identity() {
        let p = SoftLabels::new(Tensor::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap()).unwrap();
        let out = lame_iterate(&p, &[vec![], vec![]], 10).unwrap();
        assert!(out.probs().max_abs_diff(p.probs()) < 1e-12);
    }

    #[test]
    fn knn_affinity_is_symmetric_and_nonnegative() {
        let emb = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let w = knn_affinity(&emb, 1);
        for (u, row) in w.iter().enumerate() {
            for &(v, s) in row {
                assert!(s > 0.0);
                let back = w[v].iter().find(|&&(x, _)| x == u).unwrap().1;
                assert_eq!(back, s);
            }
        }
        // node 3 points away from everything: no positive affinity
        assert!(w[3].is_empty());
    }

    #[test]
    fn tent_zero_lr_only_switches_normalization() {
        let g = path3([0, 1, 0]);
        let mut m = ModelState::init(ModelConfig::synthetic(2, 2), 5).unwrap();
        let before = m.clone();
        let fwd = m.forward(&g, &EdgeWeights::uniform(&g), None).unwrap();
        let out = refine(&mut m, &fwd, &RefineMethod::Tent { lr: 0.0, steps: 1 }, EmbeddingSource::Penultimate).unwrap();
        assert_eq!(out.mutated, vec!["bn_scale", "bn_shift", "inference_norm"]);
        assert_eq!(m.classifier, before.classifier);
        assert_eq!(m.encoder, before.encoder);
        assert_eq!(m.config.inference_norm, BnMode::Batch);
        let mut batch = before.clone();
        batch.config.inference_norm = BnMode::Batch;
        let expected = batch.forward(&g, &EdgeWeights::uniform(&g), None).unwrap();
        assert_eq!(out.soft.probs(), &expected.probs);
    }

    #[test]
    fn dispatch_outputs_are_row_stochastic() {
        let g = path3([0, 1, 0]);
        let methods = [
            RefineMethod::Tent { lr: 0.05, steps: 2 },
            RefineMethod::T3a { support: 2 },
            RefineMethod::Lame { k_nn: 1, iters: 5 },
        ];
        for method in &methods {
            for src in [EmbeddingSource::Penultimate, EmbeddingSource::Encoder] {
                let mut m = ModelState::init(ModelConfig::synthetic(2, 2), 5).unwrap();
                let fwd = m.forward(&g, &EdgeWeights::uniform(&g), None).unwrap();
                let out = refine(&mut m, &fwd, method, src).unwrap();
                for row in out.soft.probs().iter_rows() {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
