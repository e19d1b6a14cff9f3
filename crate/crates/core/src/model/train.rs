use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::{BnMode, ModelConfig, ModelState, Trainable};
use crate::error::{Error, Result};
use crate::graph::{EdgeWeights, Graph, Role, SplitMasks};
use crate::numerics::{Adam, BatchStats, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay, applied every `decay_every` epochs
    /// (0 disables it).
    pub lr_decay: f64,
    pub decay_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 0.003,
            lr_decay: 0.9,
            decay_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Mean negative log-likelihood of `labels[i]` at row `nodes[i]` of `logits`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, nodes: &[usize], labels: &[usize]) -> Result<Var> {
    if nodes.is_empty() {
        return Err(Error::Degenerate("cross-entropy over zero nodes".into()));
    }
    let logp = tape.log_softmax(logits);
    let rows = tape.gather_rows(logp, nodes)?;
    let picked = tape.pick(rows, labels)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -1.0))
}

fn update_running(model: &mut ModelState, stats: &BatchStats) {
    let m = model.config.bn_momentum;
    // running variance tracks the unbiased estimate
    let correction = if stats.count > 1 {
        stats.count as f64 / (stats.count - 1) as f64
    } else {
        1.0
    };
    let c = &mut model.classifier;
    for (j, (&mean, &var)) in stats.mean.iter().zip(&stats.var).enumerate() {
        let rm = c.running_mean.get(0, j);
        let rv = c.running_var.get(0, j);
        c.running_mean.set(0, j, (1.0 - m) * rm + m * mean);
        c.running_var.set(0, j, (1.0 - m) * rv + m * var * correction);
    }
}

fn accuracy_on(pred: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().zip(labels).filter(|&(&u, &y)| pred[u] == y).count();
    hits as f64 / nodes.len() as f64
}

/// Full-batch supervised training on the source graph's train nodes. The
/// returned model is the checkpoint with the best validation accuracy
/// (earliest on ties) and carries source statistics computed from every
/// labeled node of `g`.
pub fn pretrain(
    g: &Graph,
    splits: &SplitMasks,
    model_config: ModelConfig,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(ModelState, TrainingLog)> {
    if splits.roles().len() != g.num_nodes() {
        return Err(Error::dim(
            "pretrain",
            format!("{} split roles for {} nodes", splits.roles().len(), g.num_nodes()),
        ));
    }
    if cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("pretraining needs epochs > 0 and lr > 0".into()));
    }
    if model_config.feat_dim != g.feat_dim() || model_config.num_classes != g.num_classes() {
        return Err(Error::dim("pretrain", "model dimensions do not match the graph"));
    }
    let train = splits.nodes(Role::Train);
    let val = splits.nodes(Role::Val);
    let train_y = train.iter().map(|&u| g.label(u)).collect::<Result<Vec<_>>>()?;
    let val_y = val.iter().map(|&u| g.label(u)).collect::<Result<Vec<_>>>()?;

    let mut model = ModelState::init(model_config, seed)?;
    let op = g.mean_operator(&EdgeWeights::uniform(g))?;
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainingLog {
        best_val_accuracy: -1.0,
        ..TrainingLog::default()
    };
    let mut best = model.clone();

    for epoch in 1..=cfg.epochs {
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, Trainable::All);
        let x = tape.constant(g.features().clone());
        let enc = model.encode(&mut tape, &vars, &op, x, None)?;
        let cls = model.classify(&mut tape, &vars, enc.output, BnMode::Batch)?;
        let loss = cross_entropy(&mut tape, cls.logits, &train, &train_y)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::Training(format!("loss became {} at epoch {}", loss_value, epoch)));
        }
        if let Some(stats) = &cls.batch_stats {
            update_running(&mut model, stats);
        }
        let all = vars.all();
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = all
            .iter()
            .map(|&v| grads.take(v).ok_or_else(|| Error::Training("missing gradient".into())))
            .collect::<Result<_>>()?;
        let grad_refs: Vec<&Tensor> = grads.iter().collect();
        adam.step(&mut model.params_mut(), &grad_refs)
            .map_err(|e| Error::Training(format!("epoch {}: {}", epoch, e)))?;
        if cfg.decay_every > 0 && epoch % cfg.decay_every == 0 {
            adam.decay(cfg.lr_decay);
        }

        let out = model.forward_with(&op, g.features(), None)?;
        let val_accuracy = accuracy_on(&out.predictions(), &val_y, &val);
        debug!("epoch {} loss {:.4} val {:.4}", epoch, loss_value, val_accuracy);
        if val_accuracy > log.best_val_accuracy {
            log.best_val_accuracy = val_accuracy;
            log.best_epoch = epoch;
            best = model.clone();
        }
        log.epochs.push(EpochLog {
            epoch,
            loss: loss_value,
            val_accuracy,
        });
    }
    info!(
        "pretraining done: best val accuracy {:.4} at epoch {}",
        log.best_val_accuracy, log.best_epoch
    );

    best.source_stats = Some(super::compute_source_stats(g, g.labels())?);
    best.metadata.training = Some(cfg.clone());
    best.metadata.best_epoch = Some(log.best_epoch);
    best.metadata.best_val_accuracy = Some(log.best_val_accuracy);
    Ok((best, log))
}
