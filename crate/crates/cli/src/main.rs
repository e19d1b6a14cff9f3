mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use tsa::csbm::{builtin_spec, generate, ConditionId, CsbmSpec};
use tsa::diagnostics::{evaluate, shift_report, write_embeddings_csv, Metric};
use tsa::graph::{load_graph, make_splits, save_graph, EdgeWeights, Graph, SplitScheme};
use tsa::harness::{
    emit_table, run_experiment, ArchitectureConfig, ExperimentConfig, Method, ModelCache, TableFormat,
};
use tsa::model::{load_model, pretrain, save_model, PretrainConfig};
use tsa::refine::{EmbeddingSource, RefineKind, RefineMethod};
use tsa::tsa::{adapt, TsaConfig};
use tsa::Error;

use manifest::Manifest;

#[derive(Parser)]
#[command(name = "tsa", version, about = "Test-time structural alignment for graph neural networks")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, env = "TSA_LOG", default_value = "info")]
    log_level: String,
    /// Directory that relative paths resolve against; holds manifest.json.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic graph.
    Generate(GenerateArgs),
    /// Train a model on a labeled source graph.
    Pretrain(PretrainArgs),
    /// Adapt a pretrained model to a target graph.
    Adapt(AdaptArgs),
    /// Score a model, or saved predictions, against graph labels.
    Evaluate(EvaluateArgs),
    /// Measure the shift between two graphs.
    Diagnose(DiagnoseArgs),
    /// Run a seed sweep and write a result table.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Named condition, e.g. source_imbal or cond1.
    #[arg(long)]
    condition: Option<String>,
    /// TOML file whose fields override the condition (or give a full spec).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    graph: PathBuf,
    /// TOML with optional [training], [architecture] and split entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// TOML with adaptation settings; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    refine: Option<RefineKind>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    alpha_lr: Option<f64>,
    #[command(flatten)]
    refiner: RefinerFlags,
    #[arg(long)]
    embedding: Option<EmbeddingArg>,
    /// Recorded in the result; adaptation itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RefinerFlags {
    #[arg(long)]
    tent_lr: Option<f64>,
    #[arg(long)]
    tent_steps: Option<usize>,
    #[arg(long = "t3a-M")]
    t3a_m: Option<usize>,
    #[arg(long)]
    lame_knn: Option<usize>,
    #[arg(long)]
    lame_iters: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EmbeddingArg {
    Penultimate,
    Encoder,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Score the unadapted model.
    #[arg(long, required_unless_present = "predictions")]
    model: Option<PathBuf>,
    /// Score the predictions of an adapt result file.
    #[arg(long, conflicts_with = "model")]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "accuracy")]
    metric: Metric,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Degree bins for the SNR profile.
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write per-node encoder embeddings of the target graph as CSV.
    #[arg(long, requires = "model")]
    emit_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML file.
    #[arg(long, required_unless_present = "scenario")]
    config: Option<PathBuf>,
    /// Target condition run against its paired source with default settings.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Comma-separated seeds overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated methods overriding the config.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    out: PathBuf,
    /// csv, json or markdown; inferred from the extension by default.
    #[arg(long)]
    format: Option<TableFormat>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    training: PretrainConfig,
    architecture: ArchitectureConfig,
    split: Option<Vec<f64>>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| config_error(format!("{}: {}", path.display(), e)))
}

struct Context {
    workdir: PathBuf,
    manifest: Manifest,
}

impl Context {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    fn record(&mut self, path: &Path, command: &str, config: &impl Serialize) -> Result<(), Error> {
        self.manifest.record(&self.workdir, path, command, config)
    }
}

fn cmd_generate(ctx: &mut Context, a: &GenerateArgs) -> Result<(), Error> {
    let base = a
        .condition
        .as_deref()
        .map(|c| c.parse::<ConditionId>().map(builtin_spec))
        .transpose()?;
    let mut spec: CsbmSpec = match (&a.spec, base) {
        (Some(path), base) => {
            let overrides: toml::Table = read_toml(&ctx.path(path))?;
            let mut table = match base {
                Some(b) => toml::Table::try_from(&b).map_err(|e| config_error(e.to_string()))?,
                None => toml::Table::new(),
            };
            table.extend(overrides);
            table.try_into().map_err(|e| config_error(format!("graph spec: {}", e)))?
        }
        (None, Some(b)) => b,
        (None, None) => return Err(config_error("generate needs --condition or --spec")),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let g = generate(&spec)?;
    let out = ctx.path(&a.out);
    save_graph(&out, &g)?;
    info!("wrote {} nodes, {} edges to {}", g.num_nodes(), g.num_directed_edges() / 2, out.display());
    ctx.record(&out, "generate", &spec)
}

fn cmd_pretrain(ctx: &mut Context, a: &PretrainArgs) -> Result<(), Error> {
    let cfg: TrainFile = match &a.config {
        Some(p) => read_toml(&ctx.path(p))?,
        None => TrainFile::default(),
    };
    let g = load_graph(ctx.path(&a.graph))?;
    let fractions = cfg.split.clone().unwrap_or_else(|| vec![0.6, 0.2, 0.2]);
    let splits = make_splits(g.num_nodes(), SplitScheme::Source, &fractions, a.seed.wrapping_add(1))?;
    let arch = cfg.architecture.model_config(g.feat_dim(), g.num_classes());
    let (model, log) = pretrain(&g, &splits, arch, &cfg.training, a.seed)?;
    let out = ctx.path(&a.out);
    save_model(&out, &model)?;
    info!(
        "best validation accuracy {:.4} at epoch {}",
        log.best_val_accuracy, log.best_epoch
    );
    ctx.record(&out, "pretrain", &json!({ "config": cfg, "seed": a.seed }))
}

fn adapt_config(ctx: &Context, a: &AdaptArgs) -> Result<TsaConfig, Error> {
    let mut cfg: TsaConfig = match &a.config {
        Some(p) => read_toml(&ctx.path(p))?,
        None => TsaConfig::default(),
    };
    if let Some(kind) = a.refine {
        if cfg.refine.kind() != kind {
            cfg.refine = RefineMethod::default_for(kind);
        }
    }
    let f = &a.refiner;
    match &mut cfg.refine {
        RefineMethod::Tent { lr, steps } => {
            *lr = f.tent_lr.unwrap_or(*lr);
            *steps = f.tent_steps.unwrap_or(*steps);
        }
        RefineMethod::T3a { support } => *support = f.t3a_m.unwrap_or(*support),
        RefineMethod::Lame { k_nn, iters } => {
            *k_nn = f.lame_knn.unwrap_or(*k_nn);
            *iters = f.lame_iters.unwrap_or(*iters);
        }
    }
    cfg.rho1 = a.rho1.unwrap_or(cfg.rho1);
    cfg.rho2 = a.rho2.unwrap_or(cfg.rho2);
    cfg.lr_alpha = a.alpha_lr.unwrap_or(cfg.lr_alpha);
    match a.embedding {
        Some(EmbeddingArg::Penultimate) => cfg.embedding = EmbeddingSource::Penultimate,
        Some(EmbeddingArg::Encoder) => cfg.embedding = EmbeddingSource::Encoder,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Metrics over the labeled nodes of `g`, or None if it has no labels.
fn label_metrics(g: &Graph, pred: &[usize]) -> Result<Option<serde_json::Value>, Error> {
    let (p, y): (Vec<usize>, Vec<usize>) = g
        .labels()
        .iter()
        .zip(pred)
        .filter_map(|(l, &p)| l.map(|y| (p, y)))
        .unzip();
    if y.is_empty() {
        return Ok(None);
    }
    let f1 = if g.num_classes() == 2 { Metric::F1Binary } else { Metric::F1Macro };
    Ok(Some(json!({
        "labeled_nodes": y.len(),
        "accuracy": evaluate(&p, &y, Metric::Accuracy)?,
        "f1": evaluate(&p, &y, f1)?,
        "f1_kind": f1,
    })))
}

#[derive(Serialize, Deserialize)]
struct AdaptResult {
    seed: u64,
    config: TsaConfig,
    predictions: Vec<usize>,
    soft_labels: Vec<Vec<f64>>,
    metrics: Option<serde_json::Value>,
}

fn cmd_adapt(ctx: &mut Context, a: &AdaptArgs) -> Result<(), Error> {
    let cfg = adapt_config(ctx, a)?;
    let model = load_model(ctx.path(&a.model))?;
    let g = load_graph(ctx.path(&a.graph))?;
    let (soft, trace) = adapt(&model, &g, &cfg)?;
    for w in &trace.warnings {
        warn!("{}", w);
    }
    let predictions = soft.hard();
    let metrics = label_metrics(&g, &predictions)?;
    if let Some(m) = &metrics {
        info!("accuracy on labeled nodes: {}", m["accuracy"]);
    }
    let result = AdaptResult {
        seed: a.seed,
        config: cfg.clone(),
        predictions,
        soft_labels: soft.probs().to_rows(),
        metrics,
    };
    let record = json!({ "config": cfg, "seed": a.seed });
    let out = ctx.path(&a.out);
    fs::write(&out, serde_json::to_string_pretty(&result)?)?;
    ctx.record(&out, "adapt", &record)?;
    if let Some(t) = &a.trace {
        let path = ctx.path(t);
        fs::write(&path, serde_json::to_string_pretty(&trace)?)?;
        ctx.record(&path, "adapt", &record)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct SavedPredictions {
    predictions: Vec<usize>,
}

fn cmd_evaluate(ctx: &mut Context, a: &EvaluateArgs) -> Result<(), Error> {
    let g = load_graph(ctx.path(&a.graph))?;
    let pred = match (&a.model, &a.predictions) {
        (_, Some(p)) => {
            let saved: SavedPredictions = serde_json::from_str(&fs::read_to_string(ctx.path(p))?)?;
            saved.predictions
        }
        (Some(m), None) => load_model(ctx.path(m))?
            .forward(&g, &EdgeWeights::uniform(&g), None)?
            .predictions(),
        (None, None) => return Err(config_error("evaluate needs --model or --predictions")),
    };
    if pred.len() != g.num_nodes() {
        return Err(config_error(format!(
            "{} predictions for a graph with {} nodes",
            pred.len(),
            g.num_nodes()
        )));
    }
    let (p, y): (Vec<usize>, Vec<usize>) = g
        .labels()
        .iter()
        .zip(&pred)
        .filter_map(|(l, &p)| l.map(|y| (p, y)))
        .unzip();
    if y.is_empty() {
        return Err(config_error("graph has no labels to evaluate against"));
    }
    let score = evaluate(&p, &y, a.metric)?;
    let report = json!({ "metric": a.metric, "score": score, "labeled_nodes": y.len() });
    println!("{}", serde_json::to_string(&report)?);
    if let Some(o) = &a.out {
        let out = ctx.path(o);
        fs::write(&out, serde_json::to_string_pretty(&report)?)?;
        ctx.record(&out, "evaluate", &json!({ "metric": a.metric }))?;
    }
    Ok(())
}

fn cmd_diagnose(ctx: &mut Context, a: &DiagnoseArgs) -> Result<(), Error> {
    let source = load_graph(ctx.path(&a.source))?;
    let target = load_graph(ctx.path(&a.target))?;
    let model = a.model.as_ref().map(|m| load_model(ctx.path(m))).transpose()?;
    let report = shift_report(&source, &target, model.as_ref(), a.bins)?;
    let record = json!({ "bins": a.bins });
    let out = ctx.path(&a.out);
    fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    ctx.record(&out, "diagnose", &record)?;
    if let (Some(e), Some(m)) = (&a.emit_embeddings, &model) {
        let path = ctx.path(e);
        let fwd = m.forward(&target, &EdgeWeights::uniform(&target), None)?;
        write_embeddings_csv(&path, &target, &fwd.embeddings)?;
        ctx.record(&path, "diagnose", &record)?;
    }
    Ok(())
}

fn cmd_experiment(ctx: &mut Context, a: &ExperimentArgs) -> Result<(), Error> {
    let mut cfg = match (&a.config, &a.scenario) {
        (Some(p), _) => ExperimentConfig::load(ctx.path(p))?,
        (None, Some(s)) => ExperimentConfig::for_condition(s.parse()?),
        (None, None) => return Err(config_error("experiment needs --config or --scenario")),
    };
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(methods) = &a.methods {
        cfg.methods = methods.clone();
    }
    cfg.validate()?;
    let out = ctx.path(&a.out);
    let format = a.format.unwrap_or_else(|| TableFormat::for_path(&out));
    let table = run_experiment(&cfg, &mut ModelCache::new())?;
    emit_table(&table, format, &out)?;
    ctx.record(&out, "experiment", &cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    fs::create_dir_all(&cli.workdir)?;
    let mut ctx = Context {
        workdir: cli.workdir.clone(),
        manifest: Manifest::load(&cli.workdir)?,
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&mut ctx, a),
        Command::Pretrain(a) => cmd_pretrain(&mut ctx, a),
        Command::Adapt(a) => cmd_adapt(&mut ctx, a),
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a),
        Command::Diagnose(a) => cmd_diagnose(&mut ctx, a),
        Command::Experiment(a) => cmd_experiment(&mut ctx, a),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else if matches!(e, Error::Io(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
