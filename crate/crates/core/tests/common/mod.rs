#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsa::csbm::{expected_neighbor_distribution, CsbmSpec};
use tsa::dist::ClassMatrix;
use tsa::graph::{EdgeWeights, Graph};
use tsa::model::{BnMode, ModelConfig, ModelState};
use tsa::numerics::{check_gradients, Tape, Tensor, Var};
use tsa::refine::tent_loss;
use tsa::tsa::{alpha_loss, AlignedGraph, AlphaParams};
use tsa::Result;

pub const FD_STEP: f64 = 1e-6;

/// Relative error whose denominator is floored at the central-difference
/// roundoff level for an O(1) loss (about eps / FD_STEP), so near-zero
/// gradients are judged on absolute error.
pub fn fd_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Entries with magnitude in [0.2, 1.5], so kinks at zero are avoided.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.2..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Random graph with every node on a ring plus extra chords.
pub fn small_graph(seed: u64, n: usize, classes: usize, feat_dim: usize) -> Graph {
    let mut r = rng(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
    for u in 0..n {
        for v in u + 2..n {
            if !(u == 0 && v == n - 1) && r.random_bool(0.25) {
                edges.push((u, v));
            }
        }
    }
    let labels = (0..n).map(|u| Some(u % classes)).collect();
    Graph::from_edges(uniform(&mut r, n, feat_dim, -1.0, 1.0), labels, classes, &edges).unwrap()
}

pub fn random_weights(g: &Graph, seed: u64) -> EdgeWeights {
    let mut r = rng(seed);
    let w = (0..g.num_directed_edges()).map(|_| r.random_range(0.5..2.0)).collect();
    EdgeWeights::new(g, w).unwrap()
}

/// Deterministic non-constant weights used to turn an op output into a scalar.
fn probe_weights(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|k| ((k * 7 + 3) as f64 * 0.37).sin() + 0.1).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn probe(tape: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let w = tape.constant(probe_weights(r, c));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check(params: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    check_gradients(&params, FD_STEP, |t, v| {
        let out = f(t, v)?;
        probe(t, out)
    })
    .unwrap()
    .max_rel_err
}

/// Worst finite-difference relative error of every differentiable tape op.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let a = away_from_zero(&mut r, 4, 3);
    let b = away_from_zero(&mut r, 4, 3);
    let m = away_from_zero(&mut r, 3, 2);
    let row = away_from_zero(&mut r, 1, 3);
    let col = away_from_zero(&mut r, 4, 1);
    let g = small_graph(seed, 10, 3, 3);
    let op = g.mean_operator(&random_weights(&g, seed + 1)).unwrap();
    let x = away_from_zero(&mut r, 10, 3);
    let bn = uniform(&mut r, 6, 3, -2.0, 2.0);

    vec![
        ("matmul", check(vec![a.clone(), m], |t, v| t.matmul(v[0], v[1]))),
        ("add", check(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]))),
        ("sub", check(vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]))),
        ("mul", check(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]))),
        ("add_row", check(vec![a.clone(), row.clone()], |t, v| t.add_row(v[0], v[1]))),
        ("mul_row", check(vec![a.clone(), row], |t, v| t.mul_row(v[0], v[1]))),
        ("mul_col", check(vec![a.clone(), col], |t, v| t.mul_col(v[0], v[1]))),
        ("scale", check(vec![a.clone()], |t, v| Ok(t.scale(v[0], -1.7)))),
        ("add_scalar", check(vec![a.clone()], |t, v| Ok(t.add_scalar(v[0], 0.4)))),
        ("relu", check(vec![a.clone()], |t, v| Ok(t.relu(v[0])))),
        ("tanh", check(vec![a.clone()], |t, v| Ok(t.tanh(v[0])))),
        ("sigmoid", check(vec![a.clone()], |t, v| Ok(t.sigmoid(v[0])))),
        ("softmax", check(vec![a.clone()], |t, v| Ok(t.softmax(v[0])))),
        ("log_softmax", check(vec![a.clone()], |t, v| Ok(t.log_softmax(v[0])))),
        ("mean_rows", check(vec![a.clone()], |t, v| t.mean_rows(v[0]))),
        ("sum_cols", check(vec![a.clone()], |t, v| Ok(t.sum_cols(v[0])))),
        ("sum", check(vec![a.clone()], |t, v| Ok(t.sum(v[0])))),
        ("mean", check(vec![a.clone()], |t, v| t.mean(v[0]))),
        ("gather_rows", check(vec![a.clone()], |t, v| t.gather_rows(v[0], &[0, 2, 2, 3]))),
        ("scatter_add_rows", check(vec![a.clone()], |t, v| t.scatter_add_rows(v[0], &[1, 0, 1, 2], 3))),
        ("pick", check(vec![a], |t, v| t.pick(v[0], &[0, 2, 1, 1]))),
        ("spmm", check(vec![x], move |t, v| t.spmm(&op, v[0]))),
        ("batch_norm", check(vec![bn], |t, v| Ok(t.batch_norm(v[0], 1e-5)?.0))),
    ]
}

/// Finite-difference error of the TENT entropy loss in the batch-norm scale
/// and shift, on a model whose classifier sees `n` random embeddings.
pub fn tent_gradient_error(seed: u64, n: usize) -> f64 {
    let mut r = rng(seed);
    let mut model = ModelState::init(ModelConfig::synthetic(3, 3), seed).unwrap();
    model.classifier.bn_scale = uniform(&mut r, 1, 20, 0.5, 1.5);
    model.classifier.bn_shift = uniform(&mut r, 1, 20, -0.5, 0.5);
    let emb = uniform(&mut r, n, 20, -1.0, 1.0);
    let (_, gs, gb) = tent_loss(&model, &emb).unwrap();
    let mut worst = 0.0f64;
    for which in 0..2 {
        let analytic = if which == 0 { &gs } else { &gb };
        for k in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let t = if which == 0 {
                    &mut m.classifier.bn_scale
                } else {
                    &mut m.classifier.bn_shift
                };
                t.data_mut()[k] += delta;
                tent_loss(&m, &emb).unwrap().0
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(fd_error(analytic.data()[k], numeric));
        }
    }
    worst
}

fn alpha_tensors_mut(a: &mut AlphaParams) -> Vec<&mut Tensor> {
    a.layers
        .iter_mut()
        .flat_map(|l| [&mut l.mlp.w1, &mut l.mlp.b1, &mut l.mlp.w2, &mut l.mlp.b2, &mut l.bias])
        .collect()
}

/// Finite-difference error of the α cross-entropy in every α parameter, on a
/// 12-node graph with random edge weights and random α parameters.
pub fn alpha_gradient_error(seed: u64, norm: BnMode) -> f64 {
    let g = small_graph(seed, 12, 3, 3);
    let weights = random_weights(&g, seed + 7);
    let degrees = g.log_normalized_degrees(None).unwrap();
    let target = AlignedGraph {
        graph: &g,
        weights: &weights,
        degrees: &degrees,
    };
    let mut model = ModelState::init(ModelConfig::synthetic(3, 3), seed).unwrap();
    model.config.inference_norm = norm;
    let mut r = rng(seed + 11);
    let mut alpha = AlphaParams::init(model.num_layers(), 4);
    for t in alpha_tensors_mut(&mut alpha) {
        let (rows, cols) = t.shape();
        *t = uniform(&mut r, rows, cols, -0.8, 0.8);
    }
    for l in alpha.layers.iter_mut() {
        l.bias.data_mut()[0] += 1.0;
    }
    let nodes: Vec<usize> = (0..12).collect();
    let labels: Vec<usize> = (0..12).map(|_| r.random_range(0..3)).collect();
    let (_, grads) = alpha_loss(&model, &target, &alpha, &nodes, &labels).unwrap();
    let mut worst = 0.0f64;
    for (pi, analytic) in grads.iter().enumerate() {
        for k in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut a = alpha.clone();
                alpha_tensors_mut(&mut a)[pi].data_mut()[k] += delta;
                alpha_loss(&model, &target, &a, &nodes, &labels).unwrap().0
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(fd_error(analytic.data()[k], numeric));
        }
    }
    worst
}

/// Row-normalized class histogram of incoming message weight: entry (i, j)
/// is the weight flowing from class-j neighbors into class-i nodes.
pub fn weighted_histograms(g: &Graph, weights: &EdgeWeights, labels: &[usize]) -> ClassMatrix {
    let k = g.num_classes();
    let mut rows = vec![vec![0.0; k]; k];
    let w = weights.as_slice();
    for u in 0..g.num_nodes() {
        for (p, &v) in g.edge_range(u).zip(g.neighbors(u)) {
            rows[labels[u]][labels[v]] += w[p];
        }
    }
    let mut m = ClassMatrix::new(rows).unwrap();
    m.normalize_rows();
    m
}

pub struct CsbmCheck {
    pub counts: Vec<usize>,
    pub expected_counts: Vec<usize>,
    /// Worst relative error of a class-pair edge density against the block matrix.
    pub max_density_rel_err: f64,
    /// Worst row TV between empirical and closed-form neighbor-label rows.
    pub max_row_tv: f64,
}

pub fn csbm_check(spec: &CsbmSpec, g: &Graph) -> CsbmCheck {
    let k = spec.num_classes();
    let labels = g.require_labels().unwrap();
    let mut counts = vec![0usize; k];
    for &y in &labels {
        counts[y] += 1;
    }
    let mut pair_edges = vec![vec![0usize; k]; k];
    for (u, v) in g.undirected_edges() {
        let (a, b) = (labels[u].min(labels[v]), labels[u].max(labels[v]));
        pair_edges[a][b] += 1;
    }
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in i..k {
            let pairs = if i == j {
                (counts[i] * (counts[i] - 1) / 2) as f64
            } else {
                (counts[i] * counts[j]) as f64
            };
            let density = pair_edges[i][j] as f64 / pairs;
            let b = spec.connection[i][j];
            worst = worst.max((density - b).abs() / b);
        }
    }
    let expected = expected_neighbor_distribution(spec).unwrap();
    let empirical = weighted_histograms(g, &EdgeWeights::uniform(g), &labels);
    let max_row_tv = empirical.row_tv(&expected).into_iter().fold(0.0, f64::max);
    CsbmCheck {
        counts,
        expected_counts: spec.class_counts(),
        max_density_rel_err: worst,
        max_row_tv,
    }
}
