use std::path::Path;

use tsa::csbm::{builtin_spec, generate, ConditionId, CsbmSpec};
use tsa::diagnostics::{evaluate, Metric};
use tsa::graph::{make_splits, save_graph, EdgeWeights, Graph, Role, SplitScheme};
use tsa::harness::{run_experiment, ExperimentConfig, GraphSpec, Method, ModelCache, ScenarioConfig, SeedPlan};
use tsa::model::{pretrain, ModelConfig, ModelState, PretrainConfig};
use tsa::refine::RefineMethod;
use tsa::tsa::{adapt, TsaConfig};

fn small(c: ConditionId, seed: u64) -> Graph {
    let spec = CsbmSpec {
        num_nodes: 300,
        ..builtin_spec(c)
    };
    generate(&spec.with_seed(seed)).unwrap()
}

fn quick_pretrain() -> PretrainConfig {
    PretrainConfig {
        epochs: 40,
        lr: 0.01,
        ..PretrainConfig::default()
    }
}

fn trained(seed: u64) -> ModelState {
    let g = small(ConditionId::SourceImbal, seed);
    let splits = make_splits(g.num_nodes(), SplitScheme::Source, &[0.6, 0.2, 0.2], seed).unwrap();
    pretrain(&g, &splits, ModelConfig::synthetic(3, 3), &quick_pretrain(), seed).unwrap().0
}

fn is_row_stochastic(rows: impl Iterator<Item = Vec<f64>>) -> bool {
    rows.into_iter()
        .all(|r| r.iter().all(|p| (0.0..=1.0).contains(p)) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9)
}

#[test]
fn adaptation_leaves_the_model_alone_and_is_deterministic() {
    let model = trained(1);
    let before = model.clone();
    let target = small(ConditionId::Cond1, 2);
    for refine in [
        RefineMethod::T3a { support: 20 },
        RefineMethod::Tent { lr: 0.01, steps: 1 },
        RefineMethod::Lame { k_nn: 5, iters: 50 },
    ] {
        let cfg = TsaConfig {
            refine: refine.clone(),
            ..TsaConfig::default()
        };
        let (soft, trace) = adapt(&model, &target, &cfg).unwrap();
        assert_eq!(model, before);
        assert_eq!(soft.num_nodes(), 300);
        assert!(is_row_stochastic((0..300).map(|u| soft.row(u).to_vec())));
        let (again, _) = adapt(&model, &target, &cfg).unwrap();
        assert_eq!(again.probs(), soft.probs());
        assert!(trace.gamma.rows().iter().flatten().all(|g| (0.0..=10.0).contains(g)));
        let tent = matches!(refine, RefineMethod::Tent { .. });
        assert_eq!(trace.mutated.iter().any(|m| m == "bn_scale"), tent);
    }
}

#[test]
fn ablation_switches_disable_their_stage() {
    let model = trained(3);
    let target = small(ConditionId::Cond1, 4);
    let no_align = TsaConfig {
        disable_alignment: true,
        ..TsaConfig::default()
    };
    let (_, trace) = adapt(&model, &target, &no_align).unwrap();
    assert_eq!(trace.reweighted_fraction, 0.0);

    let no_snr = TsaConfig {
        disable_snr: true,
        ..TsaConfig::default()
    };
    let (_, trace) = adapt(&model, &target, &no_snr).unwrap();
    assert!(trace.reweighted_fraction > 0.0);
    for layer in 0..trace.alpha.num_layers() {
        for d in [0.0, 0.5, 1.0] {
            assert!((trace.alpha.value(layer, d) - 1.0).abs() < 1e-12);
        }
    }
}

fn file_config(dir: &Path, target: &str, methods: Vec<Method>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_condition(ConditionId::Cond1);
    cfg.scenarios = vec![ScenarioConfig {
        name: Some("files".into()),
        source: dir.join("src.graph").display().to_string(),
        target: dir.join(target).display().to_string(),
    }];
    cfg.methods = methods;
    cfg.seeds = vec![0, 1];
    cfg.pretrain = quick_pretrain();
    cfg.grids.t3a_support = vec![5];
    cfg.grids.lr_alpha = vec![0.01];
    cfg
}

#[test]
fn erm_cell_equals_a_manual_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let source = small(ConditionId::SourceImbal, 5);
    let target = small(ConditionId::Cond1, 6);
    save_graph(d.join("src.graph"), &source).unwrap();
    save_graph(d.join("tgt.graph"), &target).unwrap();
    let cfg = file_config(d, "tgt.graph", vec!["erm".parse().unwrap()]);
    let mut cache = ModelCache::new();
    let table = run_experiment(&cfg, &mut cache).unwrap();
    assert_eq!(cache.len(), 2);
    let row = table.get("files", "erm").unwrap();
    for result in &row.per_seed {
        let spec = GraphSpec::File(d.join("src.graph"));
        let model = cache.get_or_train(&spec, result.seed, &cfg, &source).unwrap();
        let split = make_splits(
            300,
            SplitScheme::Target,
            &cfg.splits.target,
            SeedPlan::new(result.seed).target_split,
        )
        .unwrap();
        let pred = model.forward(&target, &EdgeWeights::uniform(&target), None).unwrap().predictions();
        let nodes = split.nodes(Role::Unlabeled);
        let p: Vec<usize> = nodes.iter().map(|&u| pred[u]).collect();
        let y: Vec<usize> = nodes.iter().map(|&u| target.label(u).unwrap()).collect();
        let manual = 100.0 * evaluate(&p, &y, Metric::Accuracy).unwrap();
        assert_eq!(result.score, Some(manual));
    }
    assert_eq!(cache.len(), 2);
}

#[test]
fn failing_cells_are_recorded_without_aborting() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_graph(d.join("src.graph"), &small(ConditionId::SourceImbal, 7)).unwrap();
    let two_class = CsbmSpec {
        num_nodes: 200,
        label_ratio: vec![0.5, 0.5],
        connection: vec![vec![0.03, 0.01], vec![0.01, 0.03]],
        class_means: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        feature_std: 0.3,
        seed: 8,
    };
    save_graph(d.join("two.graph"), &generate(&two_class).unwrap()).unwrap();
    let cfg = file_config(d, "two.graph", vec!["erm".parse().unwrap(), "tsa-t3a".parse().unwrap()]);
    let table = run_experiment(&cfg, &mut ModelCache::new()).unwrap();
    let erm = table.get("files", "erm").unwrap();
    assert!(erm.mean.is_some());
    assert!(erm.per_seed.iter().all(|r| r.error.is_none()));
    let tsa = table.get("files", "tsa-t3a").unwrap();
    assert_eq!(tsa.mean, None);
    assert_eq!(tsa.n_seeds, 0);
    assert!(tsa.per_seed.iter().all(|r| r.score.is_none() && r.error.is_some()));
}
