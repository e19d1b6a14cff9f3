mod common;

use common::*;
use tsa::numerics::{argmax, softmax_row, Tensor};
use tsa::refine::{entropy, knn_affinity, lame_iterate, refine_lame, refine_t3a, SoftLabels};

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Recomputes every prototype from the full history at each step: the
/// support is the `m` lowest-entropy entries, earlier first on ties.
fn t3a_brute_force(init: &Tensor, z: &Tensor, m: usize) -> Vec<Vec<f64>> {
    let k = init.rows();
    let mut history: Vec<Vec<(f64, usize, Vec<f64>)>> = (0..k)
        .map(|c| {
            let scores: Vec<f64> = (0..k)
                .map(|j| init.row(c).iter().zip(init.row(j)).map(|(a, b)| a * b).sum())
                .collect();
            vec![(entropy(&softmax_row(&scores)), 0, unit(init.row(c)))]
        })
        .collect();
    let mut out = Vec::new();
    for u in 0..z.rows() {
        let protos: Vec<Vec<f64>> = history
            .iter()
            .map(|h| {
                let mut entries = h.clone();
                entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut sum = vec![0.0; z.cols()];
                for e in entries.iter().take(m) {
                    sum.iter_mut().zip(&e.2).for_each(|(s, x)| *s += x);
                }
                unit(&sum)
            })
            .collect();
        let scores: Vec<f64> = protos
            .iter()
            .map(|p| p.iter().zip(z.row(u)).map(|(a, b)| a * b).sum())
            .collect();
        let p = softmax_row(&scores);
        let c = argmax(&scores);
        history[c].push((entropy(&p), u + 1, unit(z.row(u))));
        out.push(p);
    }
    out
}

#[test]
fn t3a_matches_brute_force() {
    for seed in 0..6 {
        let mut r = rng(seed);
        let init = away_from_zero(&mut r, 3, 4);
        let z = uniform(&mut r, 25, 4, -1.0, 1.0);
        for m in [1, 2, 5, 30] {
            let fast = refine_t3a(&init, &z, m).unwrap();
            let slow = t3a_brute_force(&init, &z, m);
            for (u, row) in slow.iter().enumerate() {
                for (a, b) in fast.row(u).iter().zip(row) {
                    assert!((a - b).abs() < 1e-12, "seed {} m {} node {}", seed, m, u);
                }
            }
        }
    }
}

#[test]
fn t3a_first_node_uses_initial_prototypes() {
    let init = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let z = Tensor::from_rows(&[vec![0.3, 0.6]]).unwrap();
    let out = refine_t3a(&init, &z, 5).unwrap();
    let expected = softmax_row(&[0.3, 0.6]);
    assert!((out.row(0)[0] - expected[0]).abs() < 1e-15);
}

fn four_nodes() -> (SoftLabels, Tensor) {
    let prior = SoftLabels::new(
        Tensor::from_rows(&[vec![0.9, 0.1], vec![0.4, 0.6], vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap(),
    )
    .unwrap();
    let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 3.0]]).unwrap();
    (prior, z)
}

#[test]
fn lame_affinity_by_hand() {
    let (_, z) = four_nodes();
    let w = knn_affinity(&z, 1);
    assert_eq!(w, vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(3, 1.0)], vec![(2, 1.0)]]);
}

#[test]
fn lame_one_sweep_by_hand() {
    let (prior, z) = four_nodes();
    let out = refine_lame(&prior, &z, 1, 1).unwrap();
    // node 0: softmax(ln 0.9 + 0.4, ln 0.1 + 0.6)
    let a = 0.9 * 0.4f64.exp();
    let b = 0.1 * 0.6f64.exp();
    assert!((out.row(0)[0] - a / (a + b)).abs() < 1e-12);
    // node 3: softmax(ln 0.2 + 0.5, ln 0.8 + 0.5) keeps the prior
    assert!((out.row(3)[0] - 0.2).abs() < 1e-12);
    // node 2: softmax(ln 0.5 + 0.2, ln 0.5 + 0.8)
    let c = 0.2f64.exp();
    let d = 0.8f64.exp();
    assert!((out.row(2)[1] - d / (c + d)).abs() < 1e-12);
}

#[test]
fn lame_converges_to_a_fixed_point() {
    let (prior, z) = four_nodes();
    let w = knn_affinity(&z, 1);
    let out = lame_iterate(&prior, &w, 500).unwrap();
    for u in 0..4 {
        let mut logits: Vec<f64> = prior.row(u).iter().map(|p| p.ln()).collect();
        for &(v, a) in &w[u] {
            logits.iter_mut().zip(out.row(v)).for_each(|(l, x)| *l += a * x);
        }
        let fixed = softmax_row(&logits);
        for (x, y) in fixed.iter().zip(out.row(u)) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}

#[test]
fn lame_without_neighbors_returns_prior() {
    let (prior, _) = four_nodes();
    let empty = vec![Vec::new(); 4];
    let out = lame_iterate(&prior, &empty, 10).unwrap();
    for (a, b) in out.probs().data().iter().zip(prior.probs().data()) {
        assert!((a - b).abs() < 1e-15);
    }
}
