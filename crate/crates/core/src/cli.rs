//! Command-line front end: `label`, `run` and `analyze`.
//!
//! Each command reads an optional flat TOML file; flags override file
//! values. Exit codes: 0 success, 2 configuration or input errors, 3
//! runtime failures.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actors::ActorMemory;
use crate::analysis::{conflict_report, ConflictReport};
use crate::console::{AggregateNorm, ConsoleState, Regime, DEFAULT_CONSOLE_ETA};
use crate::corpus::{
    generate_reference_task, generate_synthetic_corpus, label_corpus, load_points, save_points, Corpus,
    GeneratorConfig, LabelRegistry, Provenance, RawRecord,
};
use crate::error::{Error, Result};
use crate::initializer::{
    evaluate_mixtures, fit_regressor, initialize_actor_weights, natural_proportions, planted_subcategory_costs,
    sample_mixtures, search_best_mixture, write_evaluations_csv, CostSurface, FitSettings, ProxyEvaluator,
    RegressorFamily, TrainedProxy,
};
use crate::pipeline::{
    run_pipeline, Event, EventSink, JsonlSink, PipelineOutcome, RewardOracle, SelectionMode, SelectionRun,
};
use crate::reward::{
    batch_rewards, write_reward_csv, Damping, InfluenceConfig, InfluenceMode, ModelKind, ProjectionKind, ReferenceTask,
    RewardModel, RewardRow,
};

#[derive(Debug, Parser)]
#[command(name = "collabsel", version, about = "Multi-actor collaborative data selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label raw records (or generate a synthetic corpus) and write a corpus.
    Label(LabelArgs),
    /// Run staged selection and write a run directory.
    Run(Box<RunArgs>),
    /// Write the per-(domain, quality interval) conflict report.
    Analyze(AnalyzeArgs),
}

fn read_toml<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push(b'\n');
    write_bytes(path, &text)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPath(path.to_path_buf()))
    }
}

/// `corpus.jsonl` -> `corpus.reference.jsonl`
pub fn reference_sibling(corpus: &Path) -> PathBuf {
    corpus.with_extension("reference.jsonl")
}

// ---------------------------------------------------------------- label

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelConfig {
    pub output: Option<PathBuf>,
    /// Raw JSON-lines records `{features, domain, token_count?, target?}`.
    pub input: Option<PathBuf>,
    /// TOML generator spec; used when no input is given.
    pub generator: Option<PathBuf>,
    pub seed: u64,
    /// Reference points written next to generated corpora.
    pub reference_output: Option<PathBuf>,
    pub domains: Option<Vec<String>>,
    pub topics: Option<Vec<String>>,
    /// Linear quality scorer `w . x + b`.
    pub quality_weights: Option<Vec<f64>>,
    pub quality_bias: f64,
    /// Map the linear score through `5 * sigmoid` instead of using it as is.
    pub quality_squash: bool,
    /// Nearest-centroid topic classifier, one centroid per registered topic.
    pub topic_centroids: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reference_output: Option<PathBuf>,
}

impl LabelArgs {
    pub fn resolve(&self) -> Result<LabelConfig> {
        let mut cfg: LabelConfig = read_toml(self.config.as_deref())?;
        if let Some(v) = &self.output {
            cfg.output = Some(v.clone());
        }
        if let Some(v) = &self.input {
            cfg.input = Some(v.clone());
        }
        if let Some(v) = &self.generator {
            cfg.generator = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.reference_output {
            cfg.reference_output = Some(v.clone());
        }
        Ok(cfg)
    }
}

fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// Labels or generates a corpus and returns it with the printed summary.
pub fn cmd_label(cfg: &LabelConfig) -> Result<(Corpus, String)> {
    let output = cfg
        .output
        .clone()
        .ok_or_else(|| Error::Config("label needs an output path".into()))?;
    let corpus = if let Some(input) = &cfg.input {
        require(input)?;
        let text = fs::read_to_string(input).map_err(|e| Error::io(input.display().to_string(), e))?;
        let raw: Vec<RawRecord> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("{}:{}", input.display(), n + 1), e)))
            .collect::<Result<_>>()?;
        let mut registry = LabelRegistry::default();
        if let Some(d) = &cfg.domains {
            registry.domains = d.clone();
        }
        if let Some(t) = &cfg.topics {
            registry.topics = t.clone();
        }
        let weights = cfg
            .quality_weights
            .clone()
            .ok_or_else(|| Error::Config("labeling raw input needs quality_weights".into()))?;
        let centroids = cfg
            .topic_centroids
            .clone()
            .ok_or_else(|| Error::Config("labeling raw input needs topic_centroids".into()))?;
        if centroids.len() != registry.topics.len() {
            return Err(Error::Config(format!(
                "{} topic centroids for {} registered topics",
                centroids.len(),
                registry.topics.len()
            )));
        }
        let bias = cfg.quality_bias;
        let squash = cfg.quality_squash;
        let topics = registry.topics.clone();
        label_corpus(
            &raw,
            |x| {
                let s = crate::linalg::dot(&weights, x) + bias;
                if squash {
                    5.0 / (1.0 + (-s).exp())
                } else {
                    s
                }
            },
            |x| topics[nearest_centroid(&centroids, x)].clone(),
            registry,
            &input.display().to_string(),
        )?
    } else if let Some(spec) = &cfg.generator {
        let gen: GeneratorConfig = read_toml(Some(spec))?;
        let corpus = generate_synthetic_corpus(&gen, cfg.seed)?;
        let reference = generate_reference_task(&gen, cfg.seed)?;
        let ref_path = cfg
            .reference_output
            .clone()
            .unwrap_or_else(|| reference_sibling(&output));
        save_points(&reference, &ref_path)?;
        corpus
    } else {
        return Err(Error::Config("label needs either `input` or `generator`".into()));
    };
    corpus.save(&output)?;
    let summary = label_summary(&corpus);
    Ok((corpus, summary))
}

/// Counts and shares per subcategory for each built-in attribute.
pub fn label_summary(corpus: &Corpus) -> String {
    let mut out = format!("{} points, d_f = {}\n", corpus.len(), corpus.d_f());
    let n = corpus.len().max(1) as f64;
    for attr in ["domain", "quality", "topic"] {
        out += &format!("{attr}:\n");
        for (label, count) in corpus.histogram(attr) {
            out += &format!("  {label:<16} {count:>8} {:>7.2}%\n", 100.0 * count as f64 / n);
        }
    }
    out
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// All weights zero.
    None,
    /// Closed-form cost surface from the generator's planted corruption.
    Planted,
    /// Small models trained on mixture samples.
    TrainedProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Defaults to `<corpus stem>.reference.jsonl`.
    pub reference: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,

    pub total_steps: usize,
    pub update_every: usize,
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub random_baseline: bool,

    pub actors: Vec<String>,
    pub actor_eta: f64,
    /// Per-actor overrides.
    pub actor_etas: BTreeMap<String, f64>,
    pub samples_per_subcategory: usize,

    pub console_eta: f64,
    pub regime: String,
    pub aggregate_norm: AggregateNorm,
    pub fixed_theta: bool,

    pub model: ModelKind,
    pub ridge: f64,
    pub reference_sample: usize,
    pub influence_mode: InfluenceMode,
    pub projection_dim: usize,
    pub projection_seed: u64,
    pub cg_tolerance: f64,
    pub cg_max_iters: Option<usize>,
    /// Relative damping factor (times trace(H)/dim).
    pub damping: f64,

    pub init: Option<InitStrategy>,
    pub init_configs: usize,
    pub init_family: RegressorFamily,
    pub init_candidates: usize,
    pub init_concentration: f64,
    pub init_penalty: f64,
    pub proxy_sample_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let run = SelectionRun::default();
        let infl = InfluenceConfig::default();
        Self {
            corpus: None,
            reference: None,
            output_dir: None,
            total_steps: run.total_steps,
            update_every: run.update_every,
            k: run.k,
            batch_size: run.batch_size,
            learning_rate: run.learning_rate,
            seed: 0,
            random_baseline: false,
            actors: vec!["quality".into(), "domain".into(), "topic".into()],
            actor_eta: crate::actors::DEFAULT_ETA,
            actor_etas: BTreeMap::new(),
            samples_per_subcategory: crate::actors::DEFAULT_SAMPLES_PER_SUBCATEGORY,
            console_eta: DEFAULT_CONSOLE_ETA,
            regime: "collaborative".into(),
            aggregate_norm: AggregateNorm::Sampled,
            fixed_theta: false,
            model: ModelKind::LinearRegression,
            ridge: 1e-3,
            reference_sample: crate::reward::DEFAULT_REFERENCE_SAMPLE,
            influence_mode: infl.mode,
            projection_dim: infl.projection_dim,
            projection_seed: 0,
            cg_tolerance: infl.cg_tolerance,
            cg_max_iters: None,
            damping: 1e-3,
            init: None,
            init_configs: crate::initializer::DEFAULT_CONFIGS,
            init_family: RegressorFamily::QuadraticRidge,
            init_candidates: crate::initializer::DEFAULT_CANDIDATES,
            init_concentration: crate::initializer::DEFAULT_CONCENTRATION,
            init_penalty: 0.25,
            proxy_sample_size: 2000,
        }
    }
}

impl RunConfig {
    pub fn selection_run(&self) -> SelectionRun {
        SelectionRun {
            total_steps: self.total_steps,
            update_every: self.update_every,
            k: self.k,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            samples_per_subcategory: self.samples_per_subcategory,
            seed: self.seed,
            selection: if self.random_baseline {
                SelectionMode::Random
            } else {
                SelectionMode::Console
            },
        }
    }

    pub fn influence(&self) -> InfluenceConfig {
        InfluenceConfig {
            mode: self.influence_mode,
            projection_dim: self.projection_dim,
            projection: ProjectionKind::Gaussian {
                seed: self.projection_seed,
            },
            cg_tolerance: self.cg_tolerance,
            cg_max_iters: self.cg_max_iters,
            damping: Damping::Relative(self.damping),
        }
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus
            .as_deref()
            .ok_or_else(|| Error::Config("run needs a corpus path".into()))
    }

    pub fn reference_path(&self) -> Result<PathBuf> {
        Ok(match &self.reference {
            Some(p) => p.clone(),
            None => reference_sibling(self.corpus_path()?),
        })
    }

    /// Range checks and path resolution.
    pub fn validate(&self) -> Result<()> {
        require(self.corpus_path()?)?;
        require(&self.reference_path()?)?;
        if self.output_dir.is_none() {
            return Err(Error::Config("run needs an output_dir".into()));
        }
        if self.actors.is_empty() {
            return Err(Error::Config("at least one actor is required".into()));
        }
        for (name, eta) in
            std::iter::once(("actor_eta", &self.actor_eta)).chain(self.actor_etas.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if !(0.0..=1.0).contains(eta) {
                return Err(Error::Config(format!("{name} = {eta} is outside [0, 1]")));
            }
        }
        if let Some(id) = self.actor_etas.keys().find(|k| !self.actors.contains(k)) {
            return Err(Error::Config(format!("actor_etas names unknown actor `{id}`")));
        }
        let regime: Regime = self.regime.parse()?;
        if let Regime::Single(id) = &regime {
            if !self.actors.contains(id) {
                return Err(Error::Config(format!("regime names unregistered actor `{id}`")));
            }
        }
        if !(self.ridge >= 0.0) || !(self.damping >= 0.0) {
            return Err(Error::Config("ridge and damping must be >= 0".into()));
        }
        if self.init_configs == 0 || self.proxy_sample_size == 0 {
            return Err(Error::Config("init_configs and proxy_sample_size must be >= 1".into()));
        }
        self.influence().validate()?;
        if self.total_steps == 0 || self.update_every == 0 || self.k == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "total_steps, update_every, k and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub total_steps: Option<usize>,
    #[arg(long)]
    pub update_every: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace console selection with a fresh random subset each stage.
    #[arg(long)]
    pub random_baseline: bool,
    /// Comma-separated actor ids.
    #[arg(long, value_delimiter = ',')]
    pub actors: Option<Vec<String>>,
    #[arg(long)]
    pub actor_eta: Option<f64>,
    #[arg(long)]
    pub samples_per_subcategory: Option<usize>,
    #[arg(long)]
    pub console_eta: Option<f64>,
    /// collaborative, competitive or single:<actor>.
    #[arg(long)]
    pub regime: Option<String>,
    /// Divide aggregate rewards by all subcategories instead of sampled ones.
    #[arg(long)]
    pub aggregate_all: bool,
    /// Keep theta at its initial equal weights.
    #[arg(long)]
    pub fixed_theta: bool,
    #[arg(long)]
    pub influence_mode: Option<String>,
    #[arg(long)]
    pub projection_dim: Option<usize>,
    #[arg(long)]
    pub cg_tolerance: Option<f64>,
    /// none, planted or trained-proxy.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub init_configs: Option<usize>,
    #[arg(long)]
    pub init_candidates: Option<usize>,
}

fn parse_kebab<T: for<'de> Deserialize<'de>>(what: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid {what} `{value}`")))
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c: RunConfig = read_toml(self.config.as_deref())?;
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { c.$f = v.clone().into(); })*};
        }
        set!(corpus, reference, output_dir);
        set!(total_steps, update_every, k, batch_size, learning_rate, seed, actor_eta);
        set!(
            samples_per_subcategory,
            console_eta,
            regime,
            projection_dim,
            cg_tolerance,
            init_configs,
            init_candidates
        );
        if let Some(a) = &self.actors {
            c.actors = a.clone();
        }
        if self.random_baseline {
            c.random_baseline = true;
        }
        if self.aggregate_all {
            c.aggregate_norm = AggregateNorm::All;
        }
        if self.fixed_theta {
            c.fixed_theta = true;
        }
        if let Some(m) = &self.influence_mode {
            c.influence_mode = parse_kebab("influence mode", m)?;
        }
        if let Some(i) = &self.init {
            c.init = Some(parse_kebab("init strategy", i)?);
        }
        Ok(c)
    }
}

/// Builds the starting actor memories for a run.
pub fn initialize_actors(
    cfg: &RunConfig,
    corpus: &Corpus,
    task: &ReferenceTask,
    template: &RewardModel,
    record_dir: Option<&Path>,
) -> Result<Vec<ActorMemory>> {
    let strategy = cfg.init.unwrap_or(if corpus.planted().is_some() {
        InitStrategy::Planted
    } else {
        InitStrategy::TrainedProxy
    });
    let mut out = Vec::new();
    for id in &cfg.actors {
        let eta = cfg.actor_etas.get(id).copied().unwrap_or(cfg.actor_eta);
        let blank = ActorMemory::for_registry(id, corpus.registry(), 0.0, eta)?;
        if strategy == InitStrategy::None {
            out.push(blank);
            continue;
        }
        let natural = natural_proportions(corpus, &blank)?;
        let n = blank.subcategories.len();
        let n_configs = cfg.init_configs.max(n + 1);
        let configs = sample_mixtures(id, &natural, n_configs, cfg.init_concentration, cfg.seed)?;
        let evaluator: Box<dyn ProxyEvaluator> = match strategy {
            InitStrategy::Planted => Box::new(CostSurface {
                costs: planted_subcategory_costs(corpus, &blank)?,
                concentration_penalty: cfg.init_penalty,
            }),
            _ => Box::new(TrainedProxy::new(
                corpus,
                &blank,
                task,
                template.clone(),
                cfg.proxy_sample_size,
                cfg.seed,
            )?),
        };
        let evals = evaluate_mixtures(&configs, evaluator.as_ref())?;
        let fit = fit_regressor(
            &configs,
            &evals,
            FitSettings {
                family: cfg.init_family,
                split_seed: cfg.seed,
                ..FitSettings::default()
            },
        )?;
        let best = search_best_mixture(&fit, id, cfg.init_candidates, cfg.seed)?;
        let actor = initialize_actor_weights(&best, &blank)?;
        if let Some(dir) = record_dir {
            let file = fs::File::create(dir.join(format!("{id}_evaluations.csv")))
                .map_err(|e| Error::io(format!("{id}_evaluations.csv"), e))?;
            write_evaluations_csv(file, &blank.subcategories, &configs, &evals)?;
            write_json(&dir.join(format!("{id}_regressor.json")), &fit)?;
            write_json(&dir.join(format!("actor_{id}.json")), &actor)?;
        }
        out.push(actor);
    }
    Ok(out)
}

/// Loads the reference task for a corpus.
pub fn load_reference(cfg: &RunConfig) -> Result<ReferenceTask> {
    let path = cfg.reference_path()?;
    let points = load_points(&path)?;
    let sample = cfg.reference_sample.min(points.len());
    ReferenceTask::new(points, sample, cfg.seed)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != "manifest.json") {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

/// Writes `manifest.json` listing every artifact with its SHA-256.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut artifacts = BTreeMap::new();
    for f in files {
        let key = f.to_string_lossy().replace('\\', "/");
        artifacts.insert(key, sha256_file(&dir.join(&f))?);
    }
    let mut manifest = IndexMap::new();
    manifest.insert(
        "tool",
        serde_json::json!(format!("collabsel {}", env!("CARGO_PKG_VERSION"))),
    );
    manifest.insert("artifacts", serde_json::to_value(artifacts).expect("string map"));
    write_json(&dir.join("manifest.json"), &manifest)
}

fn write_trajectories(
    dir: &Path,
    cfg: &RunConfig,
    corpus: &Corpus,
    outcome: &PipelineOutcome,
    events: &[Event],
) -> Result<()> {
    let ids = &cfg.actors;
    let mut theta = csv::Writer::from_path(dir.join("theta.csv"))?;
    let mut report = csv::Writer::from_path(dir.join("report.csv"))?;
    let mut head: Vec<String> = vec!["stage".into(), "step".into()];
    head.extend(ids.iter().map(|i| format!("theta_{i}")));
    head.extend(ids.iter().map(|i| format!("aggregate_{i}")));
    head.push("mean_aggregate".into());
    theta.write_record(&head)?;
    let mut rhead = head.clone();
    rhead.push("reference_loss".into());
    rhead.extend(corpus.registry().domains.iter().map(|d| format!("selected_{d}")));
    report.write_record(&rhead)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let stages = events.iter().filter_map(|e| match e {
        Event::Stage(s) => Some(s),
        _ => None,
    });
    for (s, snap) in stages.zip(&outcome.snapshots) {
        let mut row = vec![s.stage.to_string(), s.step.to_string()];
        row.extend(ids.iter().map(|i| opt(s.thetas.get(i).copied())));
        row.extend(ids.iter().map(|i| opt(s.aggregates.get(i).copied())));
        row.push(opt(s.mean_aggregate));
        theta.write_record(&row)?;
        row.push(s.reference_loss.to_string());
        let mut counts: IndexMap<&str, usize> = corpus.registry().domains.iter().map(|d| (d.as_str(), 0)).collect();
        for &i in &snap.selected {
            *counts.get_mut(corpus.points()[i].domain.as_str()).expect("registered") += 1;
        }
        row.extend(counts.values().map(|c| c.to_string()));
        report.write_record(&row)?;
    }
    theta.flush().map_err(|e| Error::io("theta.csv", e))?;
    report.flush().map_err(|e| Error::io("report.csv", e))?;

    let mut comp = csv::Writer::from_path(dir.join("composition.csv"))?;
    comp.write_record(["stage", "attribute", "subcategory", "count", "share"])?;
    for snap in &outcome.snapshots {
        let chosen: Vec<crate::corpus::DataPoint> = snap.selected.iter().map(|&i| corpus.points()[i].clone()).collect();
        let sub = Corpus::new(
            chosen
                .into_iter()
                .enumerate()
                .map(|(i, mut p)| {
                    p.id = i;
                    p
                })
                .collect(),
            corpus.registry().clone(),
            corpus.d_f(),
            Provenance::File { path: String::new() },
        )?;
        for attr in ["domain", "quality", "topic"] {
            for (label, count) in sub.histogram(attr) {
                comp.write_record([
                    snap.stage.to_string(),
                    attr.to_string(),
                    label,
                    count.to_string(),
                    (count as f64 / sub.len() as f64).to_string(),
                ])?;
            }
        }
    }
    comp.flush().map_err(|e| Error::io("composition.csv", e))
}

struct TeeSink {
    file: JsonlSink,
    events: Vec<Event>,
}

impl EventSink for TeeSink {
    fn record(&mut self, event: &Event) -> Result<()> {
        self.file.record(event)?;
        self.events.push(event.clone());
        Ok(())
    }
}

/// Executes a run and writes its directory. Returns the final reference loss.
pub fn cmd_run(cfg: &RunConfig) -> Result<f64> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone().expect("validated");
    create_dir(&dir)?;
    let corpus = Corpus::load(cfg.corpus_path()?)?;
    let task = load_reference(cfg)?;
    let template = RewardModel::zeros(cfg.model, corpus.d_f(), cfg.ridge)?;
    write_json(&dir.join("config.json"), cfg)?;

    let init_dir = dir.join("init");
    create_dir(&init_dir)?;
    let actors = initialize_actors(cfg, &corpus, &task, &template, Some(&init_dir))?;
    let mut console = ConsoleState::new(&cfg.actors, cfg.console_eta, cfg.regime.parse()?)?;
    console.norm = cfg.aggregate_norm;
    console.frozen = cfg.fixed_theta;
    let oracle = RewardOracle {
        model: template,
        task,
        influence: cfg.influence(),
    };
    let mut sink = TeeSink {
        file: JsonlSink::create(&dir.join("events.jsonl"))?,
        events: Vec::new(),
    };
    let outcome = run_pipeline(&corpus, actors, console, &oracle, &cfg.selection_run(), &mut sink)?;

    let snaps = dir.join("snapshots");
    let mut rewards: Vec<RewardRow> = Vec::new();
    for s in &outcome.snapshots {
        let sd = snaps.join(format!("stage_{}", s.stage));
        create_dir(&sd)?;
        for a in &s.actors {
            write_json(&sd.join(format!("actor_{}.json", a.actor_id)), a)?;
        }
        write_json(&sd.join("console.json"), &s.console)?;
        write_json(&sd.join("model.json"), &s.model)?;
        rewards.extend(s.rewards.iter().cloned());
    }
    let fin = dir.join("final");
    create_dir(&fin)?;
    for a in &outcome.actors {
        write_json(&fin.join(format!("actor_{}.json", a.actor_id)), a)?;
    }
    write_json(&fin.join("console.json"), &outcome.console)?;
    write_json(&fin.join("model.json"), &outcome.model)?;
    let mut sel = String::new();
    for id in &outcome.selected {
        sel += &format!("{id}\n");
    }
    write_bytes(&fin.join("selected.txt"), sel.as_bytes())?;
    let file = fs::File::create(dir.join("rewards.csv")).map_err(|e| Error::io("rewards.csv", e))?;
    write_reward_csv(file, &rewards)?;
    write_trajectories(&dir, cfg, &corpus, &outcome, &sink.events)?;
    write_manifest(&dir)?;
    Ok(outcome.reference_loss)
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory; supplies corpus, reference, settings and snapshots.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Snapshot stage to analyze (0 = the final model).
    #[arg(long, default_value_t = 0)]
    pub stage: usize,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Model JSON; overrides the run snapshot.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub struct AnalyzeInputs {
    pub corpus: PathBuf,
    pub reference: PathBuf,
    pub model: PathBuf,
    pub output_dir: PathBuf,
    pub stage: usize,
    pub settings: RunConfig,
}

impl AnalyzeArgs {
    pub fn resolve(&self) -> Result<AnalyzeInputs> {
        let mut settings: RunConfig = match &self.run {
            Some(run) => {
                let path = run.join("config.json");
                require(&path)?;
                let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
                serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?
            }
            None => read_toml(self.config.as_deref())?,
        };
        if let Some(c) = &self.corpus {
            settings.corpus = Some(c.clone());
        }
        if let Some(r) = &self.reference {
            settings.reference = Some(r.clone());
        }
        let corpus = settings.corpus_path()?.to_path_buf();
        let reference = settings.reference_path()?;
        let model = match (&self.model, &self.run) {
            (Some(m), _) => m.clone(),
            (None, Some(run)) if self.stage == 0 => run.join("final").join("model.json"),
            (None, Some(run)) => run
                .join("snapshots")
                .join(format!("stage_{}", self.stage))
                .join("model.json"),
            (None, None) => return Err(Error::Config("analyze needs --model or --run".into())),
        };
        let output_dir = match (&self.output_dir, &self.run) {
            (Some(o), _) => o.clone(),
            (None, Some(run)) => run.join("analysis"),
            (None, None) => return Err(Error::Config("analyze needs --output-dir or --run".into())),
        };
        for p in [&corpus, &reference, &model] {
            require(p)?;
        }
        Ok(AnalyzeInputs {
            corpus,
            reference,
            model,
            output_dir,
            stage: self.stage,
            settings,
        })
    }
}

/// Influence of every corpus point, with the whole corpus as training set.
pub fn corpus_influence(
    corpus: &Corpus,
    model: &RewardModel,
    task: &ReferenceTask,
    cfg: &InfluenceConfig,
) -> Result<Vec<f64>> {
    let train: Vec<&crate::corpus::DataPoint> = corpus.points().iter().collect();
    let ids: Vec<usize> = (0..corpus.len()).collect();
    batch_rewards(model, &train, task, &ids, corpus, cfg)
}

pub fn cmd_analyze(inputs: &AnalyzeInputs) -> Result<ConflictReport> {
    let corpus = Corpus::load(&inputs.corpus)?;
    let points = load_points(&inputs.reference)?;
    let sample = inputs.settings.reference_sample.min(points.len());
    let task = ReferenceTask::new(points, sample, inputs.settings.seed)?;
    let text = fs::read_to_string(&inputs.model).map_err(|e| Error::io(inputs.model.display().to_string(), e))?;
    let model: RewardModel =
        serde_json::from_str(&text).map_err(|e| Error::json(inputs.model.display().to_string(), e))?;
    let cfg = inputs.settings.influence();
    let influence = corpus_influence(&corpus, &model, &task, &cfg)?;
    let report = conflict_report(&corpus, &influence, inputs.stage as u64)?;
    create_dir(&inputs.output_dir)?;
    let csv_path = inputs.output_dir.join("conflict_report.csv");
    report.write_csv(fs::File::create(&csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?)?;
    write_json(&inputs.output_dir.join("conflict_report.json"), &report)?;
    let rows: Vec<RewardRow> = influence
        .iter()
        .enumerate()
        .map(|(id, &reward)| RewardRow {
            id,
            reward,
            mode: cfg.mode.as_str().into(),
            stage: inputs.stage as u64,
        })
        .collect();
    let rpath = inputs.output_dir.join("rewards.csv");
    write_reward_csv(
        fs::File::create(&rpath).map_err(|e| Error::io(rpath.display().to_string(), e))?,
        &rows,
    )?;
    Ok(report)
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 2;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let result = match &cli.command {
        Command::Label(a) => a.resolve().and_then(|c| cmd_label(&c)).map(|(corpus, summary)| {
            let _ = write!(out, "{summary}");
            let _ = writeln!(out, "wrote {} points", corpus.len());
        }),
        Command::Run(a) => a.resolve().and_then(|c| cmd_run(&c)).map(|loss| {
            let _ = writeln!(out, "final reference loss {loss}");
        }),
        Command::Analyze(a) => a.resolve().and_then(|i| cmd_analyze(&i)).map(|r| {
            let _ = writeln!(out, "conflict report: {} cells", r.cells.len());
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
