use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tsa(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsa"))
        .arg("--workdir")
        .arg(workdir)
        .arg("--log-level")
        .arg("warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(workdir: &Path, args: &[&str]) -> Output {
    let out = tsa(workdir, args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_setup(dir: &Path) {
    fs::write(dir.join("small.toml"), "num_nodes = 240\n").unwrap();
    fs::write(dir.join("train.toml"), "[training]\nepochs = 30\nlr = 0.01\n").unwrap();
    ok(dir, &["generate", "--condition", "source_imbal", "--spec", "small.toml", "--seed", "1", "--out", "src.graph"]);
    ok(dir, &["generate", "--condition", "cond1", "--spec", "small.toml", "--seed", "2", "--out", "tgt.graph"]);
    ok(dir, &["pretrain", "--graph", "src.graph", "--config", "train.toml", "--seed", "3", "--out", "model.ckpt"]);
}

#[test]
fn pipeline_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_setup(d);
    ok(
        d,
        &[
            "adapt", "--model", "model.ckpt", "--graph", "tgt.graph", "--refine", "t3a", "--t3a-M", "5",
            "--rho1", "1.0", "--rho2", "1.0", "--alpha-lr", "0.01", "--seed", "3", "--out", "result.json",
            "--trace", "trace.json",
        ],
    );
    let result = read_json(&d.join("result.json"));
    assert_eq!(result["predictions"].as_array().unwrap().len(), 240);
    assert_eq!(result["soft_labels"].as_array().unwrap().len(), 240);
    assert_eq!(result["config"]["refine"]["support"], 5);
    let acc = result["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let trace = read_json(&d.join("trace.json"));
    assert!(trace["gamma"].is_object() || trace["gamma"].is_array());

    let eval = ok(d, &["evaluate", "--graph", "tgt.graph", "--predictions", "result.json", "--out", "eval.json"]);
    let printed: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!((printed["score"].as_f64().unwrap() - acc).abs() < 1e-12);
    ok(d, &["evaluate", "--graph", "tgt.graph", "--model", "model.ckpt", "--metric", "f1_macro"]);

    ok(
        d,
        &[
            "diagnose", "--source", "src.graph", "--target", "tgt.graph", "--model", "model.ckpt", "--out",
            "report.json", "--emit-embeddings", "emb.csv",
        ],
    );
    let report = read_json(&d.join("report.json"));
    assert!(report["css"].as_f64().unwrap() >= 0.0);
    let csv = fs::read_to_string(d.join("emb.csv")).unwrap();
    assert_eq!(csv.lines().count(), 241);

    let manifest = read_json(&d.join("manifest.json"));
    let paths: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    for p in ["src.graph", "tgt.graph", "model.ckpt", "result.json", "trace.json", "eval.json", "report.json", "emb.csv"] {
        assert!(paths.contains(&p), "manifest lacks {}", p);
    }
    for a in manifest["artifacts"].as_array().unwrap() {
        assert_eq!(a["config_hash"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn experiment_emits_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_setup(d);
    let config = r#"
methods = ["erm", "t3a", "tsa-t3a"]
seeds = [0, 1]

[[scenarios]]
name = "small"
source = "src.graph"
target = "tgt.graph"

[pretrain]
epochs = 20
lr = 0.01

[grids]
t3a_support = [5, 20]
lr_alpha = [0.01]
"#;
    // graph paths in the config resolve against the process cwd
    fs::write(d.join("exp.toml"), config).unwrap();
    let run = |out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_tsa"))
            .current_dir(d)
            .args(["--log-level", "warn", "experiment", "--config", "exp.toml", "--out", out])
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("table.csv");
    run("table.json");
    run("table.md");
    let csv = fs::read_to_string(d.join("table.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scenario,method,mean,std,n_seeds,hyperparams");
    assert_eq!(lines.len(), 4);
    let json = read_json(&d.join("table.json"));
    for row in json["rows"].as_array().unwrap() {
        let vals: Vec<f64> = row["per_seed"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["score"].as_f64().unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((row["mean"].as_f64().unwrap() - mean).abs() < 1e-9);
    }
    assert!(fs::read_to_string(d.join("table.md")).unwrap().contains("**"));
    run("again.json");
    assert_eq!(read_json(&d.join("again.json")), json);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = tsa(d, &["generate", "--condition", "cond99", "--out", "x.graph"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(d.join("bad.toml"), "methods = []\n[[scenarios]]\nsource = \"cond1\"\ntarget = \"cond1\"\n").unwrap();
    let out = tsa(d, &["experiment", "--config", "bad.toml", "--out", "t.csv"]);
    assert_eq!(out.status.code(), Some(2));
    small_setup(d);
    let out = tsa(d, &["adapt", "--model", "model.ckpt", "--graph", "tgt.graph", "--rho1", "2", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("r.json").exists());
}

#[test]
fn numeric_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.toml"), "num_nodes = 120\n").unwrap();
    fs::write(d.join("train.toml"), "[training]\nepochs = 5\nlr = 1e300\n").unwrap();
    ok(d, &["generate", "--condition", "source_imbal", "--spec", "small.toml", "--out", "src.graph"]);
    let out = tsa(d, &["pretrain", "--graph", "src.graph", "--config", "train.toml", "--out", "m.ckpt"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
