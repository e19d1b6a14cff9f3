mod common;

use common::*;
use tsa::model::BnMode;

const TOL: f64 = 1e-4;

#[test]
fn every_tape_op_matches_finite_differences() {
    for seed in 0..4 {
        for (name, err) in op_gradient_errors(seed) {
            assert!(err <= TOL, "{} (seed {}): relative error {:.3e}", name, seed, err);
        }
    }
}

#[test]
fn tent_entropy_gradient() {
    for (seed, n) in [(0, 3), (1, 7), (2, 12)] {
        let err = tent_gradient_error(seed, n);
        assert!(err <= TOL, "seed {} n {}: {:.3e}", seed, n, err);
    }
}

#[test]
fn alpha_cross_entropy_gradient() {
    for seed in 0..3 {
        for norm in [BnMode::Running, BnMode::Batch] {
            let err = alpha_gradient_error(seed, norm);
            assert!(err <= TOL, "seed {} {:?}: {:.3e}", seed, norm, err);
        }
    }
}
