mod common;

use common::*;
use tsa::csbm::{builtin_spec, generate, ConditionId};

#[test]
fn generation_is_deterministic_in_the_seed() {
    let spec = builtin_spec(ConditionId::Cond3).with_seed(17);
    let a = generate(&spec).unwrap();
    assert_eq!(a, generate(&spec).unwrap());
    let b = generate(&spec.clone().with_seed(18)).unwrap();
    assert_ne!(a.csr_neighbors(), b.csr_neighbors());
}

#[test]
fn every_condition_matches_its_block_model() {
    for (i, c) in ConditionId::ALL.into_iter().enumerate() {
        let spec = builtin_spec(c).with_seed(100 + i as u64);
        let g = generate(&spec).unwrap();
        let check = csbm_check(&spec, &g);
        assert_eq!(check.counts, check.expected_counts, "{}", c);
        assert_eq!(check.counts.iter().sum::<usize>(), 6000);
        assert!(check.max_density_rel_err < 0.25, "{}: density error {}", c, check.max_density_rel_err);
        assert!(check.max_row_tv < 0.03, "{}: row TV {}", c, check.max_row_tv);
    }
}

#[test]
fn adjacency_is_simple_and_symmetric() {
    let g = generate(&builtin_spec(ConditionId::Cond1).with_seed(4)).unwrap();
    for u in 0..g.num_nodes() {
        let nbrs = g.neighbors(u);
        assert!(!nbrs.contains(&u));
        let mut sorted = nbrs.to_vec();
        sorted.dedup();
        assert_eq!(sorted.len(), nbrs.len());
        for &v in nbrs {
            assert!(g.neighbors(v).contains(&u));
        }
    }
}

#[test]
fn features_are_class_means_plus_isotropic_noise() {
    let spec = builtin_spec(ConditionId::SourceBal).with_seed(8);
    let g = generate(&spec).unwrap();
    let labels = g.require_labels().unwrap();
    let d = g.feat_dim();
    for c in 0..spec.num_classes() {
        let rows: Vec<&[f64]> = (0..g.num_nodes())
            .filter(|&u| labels[u] == c)
            .map(|u| g.features().row(u))
            .collect();
        let n = rows.len() as f64;
        for j in 0..d {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((mean - spec.class_means[c][j]).abs() < 0.03, "class {} dim {} mean {}", c, j, mean);
            assert!((var.sqrt() - spec.feature_std).abs() < 0.02, "class {} dim {} std {}", c, j, var.sqrt());
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut asym = builtin_spec(ConditionId::Cond1);
    asym.connection[0][1] = 0.01;
    assert!(generate(&asym).unwrap_err().is_config());

    let mut ratio = builtin_spec(ConditionId::Cond1);
    ratio.label_ratio = vec![0.5, 0.6, -0.1];
    assert!(generate(&ratio).unwrap_err().is_config());

    let mut means = builtin_spec(ConditionId::Cond1);
    means.class_means.pop();
    assert!(generate(&means).unwrap_err().is_config());
}

#[test]
fn condition_names_round_trip() {
    for c in ConditionId::ALL {
        assert_eq!(c.name().parse::<ConditionId>().unwrap(), c);
    }
    assert!("cond9".parse::<ConditionId>().is_err());
}
