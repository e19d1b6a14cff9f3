//! GraphSAGE mean-aggregation encoder with a batch-normalized MLP classifier.
//!
//! Layer `k` computes
//!
//! ```text
//! agg_u   = Σ_{v ∈ N(u)} w_uv · h_v / d_u
//! h_u'    = act(W_self h_u + b_self + α_k(u) · (W_nbr agg_u + b_nbr))
//! ```
//!
//! with ReLU on every layer except the last. The classifier is
//! `Linear → BatchNorm → ReLU → Linear`; at test time batch norm uses its
//! frozen running statistics.

mod checkpoint;
mod stats;
mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_model, read_model, save_model, write_model, CHECKPOINT_MAGIC};
pub use stats::{compute_source_stats, SourceStats};
pub use train::{cross_entropy, pretrain, EpochLog, PretrainConfig, TrainingLog};

use crate::error::{Error, Result};
use crate::graph::{EdgeWeights, Graph};
use crate::numerics::{BatchStats, CsrMatrix, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub classifier_hidden: usize,
    pub num_layers: usize,
    pub num_classes: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Statistics the batch-norm layer uses outside pretraining.
    #[serde(default)]
    pub inference_norm: BnMode,
}

impl ModelConfig {
    /// Synthetic-benchmark architecture: 3 encoder layers, width 20.
    pub fn synthetic(feat_dim: usize, num_classes: usize) -> Self {
        Self {
            feat_dim,
            hidden_dim: 20,
            classifier_hidden: 20,
            num_layers: 3,
            num_classes,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            inference_norm: BnMode::Running,
        }
    }
}

/// Weights are stored `in × out` so a layer is `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct SageLayer {
    pub w_self: Tensor,
    pub b_self: Tensor,
    pub w_nbr: Tensor,
    pub b_nbr: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<SageLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub bn_scale: Tensor,
    pub bn_shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ClassifierParams {
    /// Final-layer weight vector of each class, as rows (`|Y| × hidden`).
    pub fn class_weight_rows(&self) -> Tensor {
        self.w2.transpose()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub training: Option<PretrainConfig>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub classifier: ClassifierParams,
    pub source_stats: Option<SourceStats>,
    pub metadata: ModelMetadata,
}

/// Which parameters are registered as trainable leaves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    Nothing,
    All,
    BnAffine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Normalize with the statistics of the nodes being classified.
    Batch,
    /// Normalize with the running statistics collected in pretraining.
    #[default]
    Running,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub w_self: Var,
    pub b_self: Var,
    pub w_nbr: Var,
    pub b_nbr: Var,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<LayerVars>,
    pub w1: Var,
    pub b1: Var,
    pub bn_scale: Var,
    pub bn_shift: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ModelVars {
    /// Same order as [`ModelState::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([l.w_self, l.b_self, l.w_nbr, l.b_nbr]);
        }
        out.extend([self.w1, self.b1, self.bn_scale, self.bn_shift, self.w2, self.b2]);
        out
    }
}

/// Tape handles of one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    /// `W_self h + b_self` per layer.
    pub self_parts: Vec<Var>,
    /// `W_nbr agg + b_nbr` per layer, before mixing.
    pub nbr_parts: Vec<Var>,
    pub output: Var,
}

#[derive(Clone, Debug)]
pub struct ClassifierVars {
    pub penultimate: Var,
    pub logits: Var,
    pub batch_stats: Option<BatchStats>,
}

/// Materialized outputs of a full forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub self_parts: Vec<Tensor>,
    pub nbr_parts: Vec<Tensor>,
    /// Encoder output `H`.
    pub embeddings: Tensor,
    /// Classifier features feeding the final linear layer.
    pub penultimate: Tensor,
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ForwardOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.argmax_rows()
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("init shape")
}

fn linear_init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (
        uniform_init(rng, fan_in, fan_out, bound),
        uniform_init(rng, 1, fan_out, bound),
    )
}

impl ModelState {
    /// Fresh model with `U(-1/√fan_in, 1/√fan_in)` weights and biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.num_layers == 0 || config.hidden_dim == 0 || config.num_classes == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.num_layers);
        let mut in_dim = config.feat_dim;
        for _ in 0..config.num_layers {
            let (w_self, b_self) = linear_init(&mut rng, in_dim, config.hidden_dim);
            let (w_nbr, b_nbr) = linear_init(&mut rng, in_dim, config.hidden_dim);
            layers.push(SageLayer {
                w_self,
                b_self,
                w_nbr,
                b_nbr,
            });
            in_dim = config.hidden_dim;
        }
        let c = config.classifier_hidden;
        let (w1, b1) = linear_init(&mut rng, config.hidden_dim, c);
        let (w2, b2) = linear_init(&mut rng, c, config.num_classes);
        let classifier = ClassifierParams {
            w1,
            b1,
            bn_scale: Tensor::full(1, c, 1.0),
            bn_shift: Tensor::zeros(1, c),
            running_mean: Tensor::zeros(1, c),
            running_var: Tensor::full(1, c, 1.0),
            w2,
            b2,
        };
        Ok(Self {
            config,
            encoder: EncoderParams { layers },
            classifier,
            source_stats: None,
            metadata: ModelMetadata {
                seed,
                ..ModelMetadata::default()
            },
        })
    }

    pub fn num_layers(&self) -> usize {
        self.encoder.layers.len()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn require_source_stats(&self) -> Result<&SourceStats> {
        self.source_stats.as_ref().ok_or(Error::MissingStats)
    }

    /// Trainable tensors in a fixed order (running statistics excluded).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.encoder.layers {
            out.extend([&mut l.w_self, &mut l.b_self, &mut l.w_nbr, &mut l.b_nbr]);
        }
        let c = &mut self.classifier;
        out.extend([&mut c.w1, &mut c.b1, &mut c.bn_scale, &mut c.bn_shift, &mut c.w2, &mut c.b2]);
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for l in &self.encoder.layers {
            out.extend([&l.w_self, &l.b_self, &l.w_nbr, &l.b_nbr]);
        }
        let c = &self.classifier;
        out.extend([&c.w1, &c.b1, &c.bn_scale, &c.bn_shift, &c.w2, &c.b2]);
        out
    }

    pub fn register(&self, tape: &mut Tape, which: Trainable) -> ModelVars {
        let all = which == Trainable::All;
        let bn = all || which == Trainable::BnAffine;
        let layers = self
            .encoder
            .layers
            .iter()
            .map(|l| LayerVars {
                w_self: tape.leaf(l.w_self.clone(), all),
                b_self: tape.leaf(l.b_self.clone(), all),
                w_nbr: tape.leaf(l.w_nbr.clone(), all),
                b_nbr: tape.leaf(l.b_nbr.clone(), all),
            })
            .collect();
        let c = &self.classifier;
        ModelVars {
            layers,
            w1: tape.leaf(c.w1.clone(), all),
            b1: tape.leaf(c.b1.clone(), all),
            bn_scale: tape.leaf(c.bn_scale.clone(), bn),
            bn_shift: tape.leaf(c.bn_shift.clone(), bn),
            w2: tape.leaf(c.w2.clone(), all),
            b2: tape.leaf(c.b2.clone(), all),
        }
    }

    /// Encoder pass on a tape. `alphas`, when given, holds one `n×1` mixing
    /// column per layer; `None` means α ≡ 1.
    pub fn encode(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        op: &Arc<CsrMatrix>,
        x: Var,
        alphas: Option<&[Var]>,
    ) -> Result<EncoderVars> {
        if let Some(a) = alphas {
            if a.len() != vars.layers.len() {
                return Err(Error::dim(
                    "encode",
                    format!("{} mixing columns for {} layers", a.len(), vars.layers.len()),
                ));
            }
        }
        let last = vars.layers.len() - 1;
        let mut h = x;
        let mut self_parts = Vec::with_capacity(vars.layers.len());
        let mut nbr_parts = Vec::with_capacity(vars.layers.len());
        for (k, lv) in vars.layers.iter().enumerate() {
            let s = tape.matmul(h, lv.w_self)?;
            let s = tape.add_row(s, lv.b_self)?;
            let agg = tape.spmm(op, h)?;
            let nb = tape.matmul(agg, lv.w_nbr)?;
            let nb = tape.add_row(nb, lv.b_nbr)?;
            let mixed = match alphas {
                Some(a) => tape.mul_col(nb, a[k])?,
                None => nb,
            };
            let z = tape.add(s, mixed)?;
            h = if k == last { z } else { tape.relu(z) };
            if !tape.value(h).is_finite() {
                return Err(Error::Numeric(format!("encoder layer {}", k + 1)));
            }
            self_parts.push(s);
            nbr_parts.push(nb);
        }
        Ok(EncoderVars {
            self_parts,
            nbr_parts,
            output: h,
        })
    }

    /// Classifier pass on a tape.
    pub fn classify(&self, tape: &mut Tape, vars: &ModelVars, h: Var, mode: BnMode) -> Result<ClassifierVars> {
        let z = tape.matmul(h, vars.w1)?;
        let z = tape.add_row(z, vars.b1)?;
        let (normed, batch_stats) = match mode {
            BnMode::Batch => {
                let (v, s) = tape.batch_norm(z, self.config.bn_eps)?;
                (v, Some(s))
            }
            BnMode::Running => {
                let c = &self.classifier;
                let shift = tape.constant(c.running_mean.map(|m| -m));
                let eps = self.config.bn_eps;
                let inv = tape.constant(c.running_var.map(|v| 1.0 / (v + eps).sqrt()));
                let centered = tape.add_row(z, shift)?;
                (tape.mul_row(centered, inv)?, None)
            }
        };
        let scaled = tape.mul_row(normed, vars.bn_scale)?;
        let shifted = tape.add_row(scaled, vars.bn_shift)?;
        let penultimate = tape.relu(shifted);
        let logits = tape.matmul(penultimate, vars.w2)?;
        let logits = tape.add_row(logits, vars.b2)?;
        if !tape.value(logits).is_finite() {
            return Err(Error::Numeric("classifier output".into()));
        }
        Ok(ClassifierVars {
            penultimate,
            logits,
            batch_stats,
        })
    }

    /// Inference pass; batch norm follows `config.inference_norm`.
    pub fn forward(&self, g: &Graph, weights: &EdgeWeights, alphas: Option<&[Tensor]>) -> Result<ForwardOutput> {
        let op = g.mean_operator(weights)?;
        self.forward_with(&op, g.features(), alphas)
    }

    pub fn forward_with(
        &self,
        op: &Arc<CsrMatrix>,
        features: &Tensor,
        alphas: Option<&[Tensor]>,
    ) -> Result<ForwardOutput> {
        if features.cols() != self.config.feat_dim {
            return Err(Error::dim(
                "forward",
                format!("model expects {} features, graph has {}", self.config.feat_dim, features.cols()),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, Trainable::Nothing);
        let x = tape.constant(features.clone());
        let alpha_vars: Option<Vec<Var>> = alphas.map(|a| a.iter().map(|t| tape.constant(t.clone())).collect());
        let enc = self.encode(&mut tape, &vars, op, x, alpha_vars.as_deref())?;
        let cls = self.classify(&mut tape, &vars, enc.output, self.config.inference_norm)?;
        let probs = tape.softmax(cls.logits);
        Ok(ForwardOutput {
            self_parts: enc.self_parts.iter().map(|&v| tape.value(v).clone()).collect(),
            nbr_parts: enc.nbr_parts.iter().map(|&v| tape.value(v).clone()).collect(),
            embeddings: tape.value(enc.output).clone(),
            penultimate: tape.value(cls.penultimate).clone(),
            logits: tape.value(cls.logits).clone(),
            probs: tape.value(probs).clone(),
        })
    }

    /// Classifier only, on precomputed encoder output.
    pub fn classify_embeddings(&self, embeddings: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, Trainable::Nothing);
        let h = tape.constant(embeddings.clone());
        let cls = self.classify(&mut tape, &vars, h, self.config.inference_norm)?;
        let probs = tape.softmax(cls.logits);
        Ok((tape.value(cls.penultimate).clone(), tape.value(probs).clone()))
    }
}
