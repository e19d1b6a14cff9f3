//! Seed sweeps over (source, target) scenarios with hyperparameter selection
//! on the labeled part of the target graph.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::csbm::{builtin_spec, generate, ConditionId};
use crate::diagnostics::{evaluate, Metric};
use crate::error::{Error, Result};
use crate::graph::{load_graph, make_splits, EdgeWeights, Graph, Role, SplitMasks, SplitScheme};
use crate::model::{pretrain, ForwardOutput, ModelConfig, ModelState, PretrainConfig};
use crate::refine::{refine, EmbeddingSource, RefineKind, RefineMethod};
use crate::tsa::{adapt, TsaConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    /// No message reweighting.
    NoAlign,
    /// No neighbor-path weight fitting.
    NoSnr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Erm,
    Refine(RefineKind),
    Tsa(RefineKind, Ablation),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Erm => f.write_str("erm"),
            Method::Refine(k) => write!(f, "{}", k),
            Method::Tsa(k, Ablation::Full) => write!(f, "tsa-{}", k),
            Method::Tsa(k, Ablation::NoAlign) => write!(f, "tsa-{}-no-align", k),
            Method::Tsa(k, Ablation::NoSnr) => write!(f, "tsa-{}-no-snr", k),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "erm" {
            return Ok(Method::Erm);
        }
        let Some(rest) = s.strip_prefix("tsa-") else {
            return s.parse().map(Method::Refine);
        };
        let (base, ablation) = if let Some(b) = rest.strip_suffix("-no-align") {
            (b, Ablation::NoAlign)
        } else if let Some(b) = rest.strip_suffix("-no-snr") {
            (b, Ablation::NoSnr)
        } else {
            (rest, Ablation::Full)
        };
        Ok(Method::Tsa(base.parse()?, ablation))
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub const ALL_METHODS: [&str; 7] = ["erm", "tent", "t3a", "lame", "tsa-tent", "tsa-t3a", "tsa-lame"];

/// A graph given either as a named synthetic condition or a file.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GraphSpec {
    Condition(ConditionId),
    File(PathBuf),
}

impl GraphSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if let Ok(c) = s.parse::<ConditionId>() {
            return Ok(GraphSpec::Condition(c));
        }
        let path = PathBuf::from(s);
        if path.exists() {
            Ok(GraphSpec::File(path))
        } else {
            Err(Error::Config(format!("'{}' is neither a condition name nor an existing graph file", s)))
        }
    }

    pub fn label(&self) -> String {
        match self {
            GraphSpec::Condition(c) => c.name().to_string(),
            GraphSpec::File(p) => p.display().to_string(),
        }
    }

    /// Synthetic graphs are redrawn for every seed; files are loaded as is.
    fn materialize(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Condition(c) => generate(&builtin_spec(*c).with_seed(seed)),
            GraphSpec::File(p) => load_graph(p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub source: String,
    pub target: String,
}

impl ScenarioConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}->{}", self.source, self.target))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// train / val / test fractions on the source graph.
    pub source: Vec<f64>,
    /// labeled / unlabeled fractions on the target graph.
    pub target: Vec<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            source: vec![0.6, 0.2, 0.2],
            target: vec![0.03, 0.97],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub hidden_dim: usize,
    pub classifier_hidden: usize,
    pub num_layers: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 20,
            classifier_hidden: 20,
            num_layers: 3,
        }
    }
}

impl ArchitectureConfig {
    pub fn model_config(&self, feat_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim,
            classifier_hidden: self.classifier_hidden,
            num_layers: self.num_layers,
            ..ModelConfig::synthetic(feat_dim, num_classes)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub tent_lr: Vec<f64>,
    pub tent_steps: usize,
    pub t3a_support: Vec<usize>,
    pub lame_k: usize,
    pub lame_iters: usize,
    pub lr_alpha: Vec<f64>,
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            tent_lr: vec![0.001, 0.01, 0.05],
            tent_steps: 1,
            t3a_support: vec![5, 20, 50, 100],
            lame_k: 5,
            lame_iters: 100,
            lr_alpha: vec![0.001, 0.01, 0.05, 0.1],
            rho1: vec![1.0],
            rho2: vec![1.0],
        }
    }
}

impl GridConfig {
    pub fn refine_grid(&self, kind: RefineKind) -> Vec<RefineMethod> {
        match kind {
            RefineKind::Tent => self
                .tent_lr
                .iter()
                .map(|&lr| RefineMethod::Tent {
                    lr,
                    steps: self.tent_steps,
                })
                .collect(),
            RefineKind::T3a => self.t3a_support.iter().map(|&m| RefineMethod::T3a { support: m }).collect(),
            RefineKind::Lame => vec![RefineMethod::Lame {
                k_nn: self.lame_k,
                iters: self.lame_iters,
            }],
        }
    }

    /// Every TSA configuration to try for `kind`, in grid order (refiner
    /// settings outermost, then lr_alpha, rho1, rho2).
    pub fn tsa_grid(&self, base: &TsaConfig, kind: RefineKind, ablation: Ablation) -> Vec<TsaConfig> {
        let lrs: &[f64] = if ablation == Ablation::NoSnr {
            &self.lr_alpha[..self.lr_alpha.len().min(1)]
        } else {
            &self.lr_alpha
        };
        let mut out = Vec::new();
        for r in self.refine_grid(kind) {
            for &lr_alpha in lrs {
                for &rho1 in &self.rho1 {
                    for &rho2 in &self.rho2 {
                        out.push(TsaConfig {
                            refine: r.clone(),
                            lr_alpha,
                            rho1,
                            rho2,
                            disable_alignment: ablation == Ablation::NoAlign,
                            disable_snr: ablation == Ablation::NoSnr,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        out
    }

    fn validate(&self, methods: &[Method]) -> Result<()> {
        for m in methods {
            let kind = match m {
                Method::Erm => continue,
                Method::Refine(k) | Method::Tsa(k, _) => *k,
            };
            if self.refine_grid(kind).is_empty() {
                return Err(Error::Config(format!("empty hyperparameter grid for {}", m)));
            }
            if matches!(m, Method::Tsa(..)) && (self.lr_alpha.is_empty() || self.rho1.is_empty() || self.rho2.is_empty())
            {
                return Err(Error::Config(format!("empty TSA grid for {}", m)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenarios: Vec<ScenarioConfig>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub grids: GridConfig,
    /// Settings shared by every TSA run; grid entries override the
    /// refinement method, lr_alpha, rho1 and rho2.
    #[serde(default)]
    pub tsa: TsaConfig,
    /// Which representation T3A and LAME use.
    #[serde(default)]
    pub embedding: EmbeddingSource,
}

fn default_methods() -> Vec<Method> {
    ALL_METHODS.iter().map(|m| m.parse().expect("builtin method")).collect()
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl ExperimentConfig {
    /// Default recipe for a named target condition against its paired source.
    pub fn for_condition(target: ConditionId) -> Self {
        Self {
            scenarios: vec![ScenarioConfig {
                name: Some(target.name().to_string()),
                source: target.paired_source().name().to_string(),
                target: target.name().to_string(),
            }],
            methods: default_methods(),
            seeds: default_seeds(),
            metric: Metric::Accuracy,
            splits: SplitConfig::default(),
            architecture: ArchitectureConfig::default(),
            pretrain: PretrainConfig::default(),
            grids: GridConfig::default(),
            tsa: TsaConfig::default(),
            embedding: EmbeddingSource::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("at least one scenario is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for s in &self.scenarios {
            GraphSpec::parse(&s.source)?;
            GraphSpec::parse(&s.target)?;
        }
        self.grids.validate(&self.methods)?;
        TsaConfig {
            refine: RefineMethod::default_for(RefineKind::T3a),
            ..self.tsa.clone()
        }
        .validate()
    }
}

/// Per-role seeds derived from an experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPlan {
    pub source_graph: u64,
    pub target_graph: u64,
    pub source_split: u64,
    pub target_split: u64,
    pub init: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        let base = seed.wrapping_mul(1000);
        Self {
            source_graph: base + 1,
            target_graph: base + 2,
            source_split: base + 3,
            target_split: base + 4,
            init: base + 5,
        }
    }
}

/// Pretrained models keyed by source graph, seed and training recipe, so
/// scenarios sharing a source train it once per seed.
#[derive(Default)]
pub struct ModelCache {
    models: HashMap<String, ModelState>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    fn key(source: &GraphSpec, seed: u64, cfg: &ExperimentConfig) -> String {
        format!(
            "{}|{}|{}|{}|{}",
            source.label(),
            seed,
            serde_json::to_string(&cfg.pretrain).unwrap_or_default(),
            serde_json::to_string(&cfg.architecture).unwrap_or_default(),
            serde_json::to_string(&cfg.splits.source).unwrap_or_default()
        )
    }

    /// Returns the cached model or pretrains one on `source_graph`.
    pub fn get_or_train(
        &mut self,
        source: &GraphSpec,
        seed: u64,
        cfg: &ExperimentConfig,
        source_graph: &Graph,
    ) -> Result<&ModelState> {
        let key = Self::key(source, seed, cfg);
        if !self.models.contains_key(&key) {
            let plan = SeedPlan::new(seed);
            let splits = make_splits(
                source_graph.num_nodes(),
                SplitScheme::Source,
                &cfg.splits.source,
                plan.source_split,
            )?;
            let arch = cfg
                .architecture
                .model_config(source_graph.feat_dim(), source_graph.num_classes());
            let (model, log) = pretrain(source_graph, &splits, arch, &cfg.pretrain, plan.init)?;
            info!(
                "pretrained on {} (seed {}): val accuracy {:.4} at epoch {}",
                source.label(),
                seed,
                log.best_val_accuracy,
                log.best_epoch
            );
            self.models.insert(key.clone(), model);
        }
        Ok(&self.models[&key])
    }
}

/// Index of the best score; the first entry wins ties.
pub fn grid_select(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Metric on unlabeled target nodes, in percent.
    pub score: Option<f64>,
    /// Metric on labeled target nodes for the selected setting, in percent.
    pub selection_score: Option<f64>,
    pub hyperparams: Option<String>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    /// Mean over seeds; absent if any seed failed.
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two seeds.
    pub std: Option<f64>,
    pub n_seeds: usize,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub metric: Metric,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, scenario: &str, method: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scenario == scenario && r.method == method)
    }

    pub fn mean(&self, scenario: &str, method: &str) -> Option<f64> {
        self.get(scenario, method).and_then(|r| r.mean)
    }

    pub fn scenarios(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.scenario) {
                out.push(r.scenario.clone());
            }
        }
        out
    }

    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }
}

fn summarize(scenario: String, method: String, per_seed: Vec<SeedResult>) -> ResultRow {
    let values: Vec<f64> = per_seed.iter().filter_map(|r| r.score).collect();
    let complete = values.len() == per_seed.len() && !values.is_empty();
    let mean = complete.then(|| values.iter().sum::<f64>() / values.len() as f64);
    let std = match mean {
        Some(m) if values.len() >= 2 => {
            Some((values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt())
        }
        _ => None,
    };
    ResultRow {
        scenario,
        method,
        mean,
        std,
        n_seeds: values.len(),
        per_seed,
    }
}

/// Target graph, split and the unadapted forward pass for one seed.
struct TargetContext<'a> {
    graph: &'a Graph,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    base: ForwardOutput,
    metric: Metric,
}

impl TargetContext<'_> {
    /// Percent score of `pred` on `nodes`. Only the labels of `nodes` are read.
    fn score(&self, pred: &[usize], nodes: &[usize]) -> Result<f64> {
        let y = nodes.iter().map(|&u| self.graph.label(u)).collect::<Result<Vec<_>>>()?;
        let p: Vec<usize> = nodes.iter().map(|&u| pred[u]).collect();
        Ok(100.0 * evaluate(&p, &y, self.metric)?)
    }
}

/// Scores every candidate on labeled nodes, keeps the first best, and scores
/// that candidate once on unlabeled nodes.
fn select_and_score<T: fmt::Display>(
    ctx: &TargetContext<'_>,
    candidates: &[T],
    mut run: impl FnMut(&T) -> Result<Vec<usize>>,
) -> Result<(f64, f64, String)> {
    let mut preds = Vec::with_capacity(candidates.len());
    let mut scores = Vec::with_capacity(candidates.len());
    let mut last_err = None;
    for c in candidates {
        match run(c).and_then(|p| Ok((ctx.score(&p, &ctx.labeled)?, p))) {
            Ok((s, p)) => {
                scores.push(s);
                preds.push(Some(p));
            }
            Err(e) => {
                warn!("candidate {} failed: {}", c, e);
                scores.push(f64::NAN);
                preds.push(None);
                last_err = Some(e);
            }
        }
    }
    let Some(best) = grid_select(&scores) else {
        return Err(last_err.unwrap_or_else(|| Error::Config("empty grid".into())));
    };
    let pred = preds[best].as_ref().expect("selected candidate succeeded");
    Ok((ctx.score(pred, &ctx.unlabeled)?, scores[best], candidates[best].to_string()))
}

struct TsaCandidate(TsaConfig);

impl fmt::Display for TsaCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} lr_alpha={} rho1={} rho2={}",
            self.0.refine, self.0.lr_alpha, self.0.rho1, self.0.rho2
        )
    }
}

fn run_method(
    model: &ModelState,
    ctx: &TargetContext<'_>,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<(f64, f64, String)> {
    match method {
        Method::Erm => {
            let pred = ctx.base.predictions();
            Ok((
                ctx.score(&pred, &ctx.unlabeled)?,
                ctx.score(&pred, &ctx.labeled)?,
                "-".to_string(),
            ))
        }
        Method::Refine(kind) => select_and_score(ctx, &cfg.grids.refine_grid(kind), |r| {
            let mut m = model.clone();
            Ok(refine(&mut m, &ctx.base, r, cfg.embedding)?.soft.hard())
        }),
        Method::Tsa(kind, ablation) => {
            let base = TsaConfig {
                embedding: cfg.embedding,
                ..cfg.tsa.clone()
            };
            let grid: Vec<TsaCandidate> = cfg
                .grids
                .tsa_grid(&base, kind, ablation)
                .into_iter()
                .map(TsaCandidate)
                .collect();
            select_and_score(ctx, &grid, |c| Ok(adapt(model, ctx.graph, &c.0)?.0.hard()))
        }
    }
}

/// Runs every (scenario, method, seed) cell. A failing cell is recorded in
/// the table instead of aborting the sweep.
pub fn run_experiment(cfg: &ExperimentConfig, cache: &mut ModelCache) -> Result<ResultTable> {
    cfg.validate()?;
    let mut table = ResultTable {
        metric: cfg.metric,
        rows: Vec::new(),
    };
    for scenario in &cfg.scenarios {
        let source = GraphSpec::parse(&scenario.source)?;
        let target = GraphSpec::parse(&scenario.target)?;
        let name = scenario.display_name();
        let mut cells: Vec<Vec<SeedResult>> = vec![Vec::new(); cfg.methods.len()];
        for &seed in &cfg.seeds {
            let plan = SeedPlan::new(seed);
            let prepared = (|| -> Result<(ModelState, Graph, SplitMasks)> {
                let source_graph = source.materialize(plan.source_graph)?;
                let model = cache.get_or_train(&source, seed, cfg, &source_graph)?.clone();
                let target_graph = target.materialize(plan.target_graph)?;
                let split = make_splits(
                    target_graph.num_nodes(),
                    SplitScheme::Target,
                    &cfg.splits.target,
                    plan.target_split,
                )?;
                Ok((model, target_graph, split))
            })();
            let (model, target_graph, split) = match prepared {
                Ok(p) => p,
                Err(e) => {
                    warn!("{} seed {}: setup failed: {}", name, seed, e);
                    for c in cells.iter_mut() {
                        c.push(SeedResult {
                            seed,
                            score: None,
                            selection_score: None,
                            hyperparams: None,
                            error: Some(e.to_string()),
                        });
                    }
                    continue;
                }
            };
            let base = match model.forward(&target_graph, &EdgeWeights::uniform(&target_graph), None) {
                Ok(b) => b,
                Err(e) => {
                    for c in cells.iter_mut() {
                        c.push(SeedResult {
                            seed,
                            score: None,
                            selection_score: None,
                            hyperparams: None,
                            error: Some(e.to_string()),
                        });
                    }
                    continue;
                }
            };
            let ctx = TargetContext {
                graph: &target_graph,
                labeled: split.nodes(Role::Labeled),
                unlabeled: split.nodes(Role::Unlabeled),
                base,
                metric: cfg.metric,
            };
            for (i, &method) in cfg.methods.iter().enumerate() {
                let result = match run_method(&model, &ctx, method, cfg) {
                    Ok((score, sel, hp)) => {
                        info!("{} seed {} {}: {:.2} (labeled {:.2}, {})", name, seed, method, score, sel, hp);
                        SeedResult {
                            seed,
                            score: Some(score),
                            selection_score: Some(sel),
                            hyperparams: Some(hp),
                            error: None,
                        }
                    }
                    Err(e) => {
                        warn!("{} seed {} {} failed: {}", name, seed, method, e);
                        SeedResult {
                            seed,
                            score: None,
                            selection_score: None,
                            hyperparams: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                cells[i].push(result);
            }
        }
        for (method, per_seed) in cfg.methods.iter().zip(cells) {
            table.rows.push(summarize(name.clone(), method.to_string(), per_seed));
        }
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Config(format!("unknown table format '{}'", other))),
        }
    }
}

impl TableFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => TableFormat::Csv,
            Some("md") => TableFormat::Markdown,
            _ => TableFormat::Json,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{:.4}", x))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_table(table: &ResultTable, format: TableFormat) -> Result<String> {
    Ok(match format {
        TableFormat::Json => serde_json::to_string_pretty(table)? + "\n",
        TableFormat::Csv => {
            let mut out = String::from("scenario,method,mean,std,n_seeds,hyperparams\n");
            for r in &table.rows {
                let hp: Vec<String> = r
                    .per_seed
                    .iter()
                    .map(|s| s.hyperparams.clone().unwrap_or_else(|| "failed".into()))
                    .collect();
                out += &format!(
                    "{},{},{},{},{},{}\n",
                    csv_field(&r.scenario),
                    csv_field(&r.method),
                    fmt_opt(r.mean),
                    fmt_opt(r.std),
                    r.n_seeds,
                    csv_field(&hp.join(";"))
                );
            }
            out
        }
        TableFormat::Markdown => {
            let scenarios = table.scenarios();
            let methods = table.methods();
            let best: Vec<Option<f64>> = scenarios
                .iter()
                .map(|s| {
                    methods
                        .iter()
                        .filter_map(|m| table.mean(s, m))
                        .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))))
                })
                .collect();
            let mut out = format!("| method | {} |\n", scenarios.join(" | "));
            out += &format!("|---|{}\n", "---|".repeat(scenarios.len()));
            for m in &methods {
                out += &format!("| {} |", m);
                for (s, b) in scenarios.iter().zip(&best) {
                    let cell = match table.get(s, m) {
                        Some(r) => match r.mean {
                            Some(mean) => {
                                let text = match r.std {
                                    Some(sd) => format!("{:.2} ± {:.2}", mean, sd),
                                    None => format!("{:.2}", mean),
                                };
                                if Some(mean) == *b {
                                    format!("**{}**", text)
                                } else {
                                    text
                                }
                            }
                            None => "failed".to_string(),
                        },
                        None => String::new(),
                    };
                    out += &format!(" {} |", cell);
                }
                out.push('\n');
            }
            out
        }
    })
}

pub fn emit_table(table: &ResultTable, format: TableFormat, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_table(table, format)?)?;
    Ok(())
}
