//! The staged selection loop.
//!
//! Every `U` steps each active actor probes its subcategories, rewards are
//! computed against the current model, actor weights and `theta` update,
//! the whole corpus is rescored and the top-k points become the training
//! subset. Every step trains the reward model on a batch drawn from that
//! subset.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::actors::{compute_subcategory_reward, sample_partition, ActorMemory, Partition};
use crate::console::{actor_aggregate_reward, score_corpus, select_top_k_dense, ConsoleState, Regime};
use crate::corpus::{Corpus, DataPoint};
use crate::error::{Error, Result};
use crate::reward::{batch_rewards, InfluenceConfig, ReferenceTask, RewardModel, RewardRow};
use crate::rng::{derive_seed, stream};

/// How the training subset is chosen at each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Actors and console pick the top-k.
    #[default]
    Console,
    /// A fresh uniform subset every stage; no rewards are computed.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionRun {
    /// `T`
    pub total_steps: usize,
    /// `U`
    pub update_every: usize,
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probe size per subcategory (`m`).
    pub samples_per_subcategory: usize,
    pub seed: u64,
    pub selection: SelectionMode,
}

impl Default for SelectionRun {
    fn default() -> Self {
        Self {
            total_steps: 750,
            update_every: 150,
            k: 2000,
            batch_size: 256,
            learning_rate: 0.05,
            samples_per_subcategory: crate::actors::DEFAULT_SAMPLES_PER_SUBCATEGORY,
            seed: 0,
            selection: SelectionMode::Console,
        }
    }
}

impl SelectionRun {
    pub fn validate(&self, corpus_len: usize) -> Result<()> {
        if self.total_steps == 0 || self.update_every == 0 {
            return Err(Error::Config("total_steps and update_every must be >= 1".into()));
        }
        if self.k == 0 || self.k > corpus_len {
            return Err(Error::Config(format!("k = {} must lie in 1..={corpus_len}", self.k)));
        }
        if self.batch_size == 0 || self.samples_per_subcategory == 0 {
            return Err(Error::Config(
                "batch_size and samples_per_subcategory must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// `floor(T / U)`
    pub fn stages(&self) -> usize {
        self.total_steps / self.update_every
    }
}

/// The model, reference task and influence settings that produce rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOracle {
    /// Initial model state; training starts from these parameters.
    pub model: RewardModel,
    pub task: ReferenceTask,
    pub influence: InfluenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Start {
        regime: String,
        selection: SelectionMode,
        frozen: bool,
        stages: usize,
        initial_digest: String,
    },
    Stage(Box<StageEvent>),
    Step {
        step: usize,
        batch_loss: f64,
    },
    Final {
        steps: usize,
        stages: usize,
        reference_loss: f64,
        selected_digest: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: usize,
    pub step: usize,
    pub selected_digest: String,
    pub selected_count: usize,
    pub thetas: IndexMap<String, f64>,
    pub aggregates: IndexMap<String, f64>,
    pub mean_aggregate: Option<f64>,
    pub actor_weights: IndexMap<String, Vec<f64>>,
    /// Per actor, per subcategory mean reward (null when unsampled).
    pub subcategory_rewards: IndexMap<String, IndexMap<String, Option<f64>>>,
    pub reference_loss: f64,
}

/// Receives events as they happen.
pub trait EventSink {
    fn record(&mut self, event: &Event) -> Result<()>;
}

impl EventSink for Vec<Event> {
    fn record(&mut self, event: &Event) -> Result<()> {
        self.push(event.clone());
        Ok(())
    }
}

/// Writes one JSON object per line, flushing after every record.
pub struct JsonlSink {
    out: BufWriter<File>,
    label: String,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let label = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(label.clone(), e))?;
        Ok(Self {
            out: BufWriter::new(file),
            label,
        })
    }
}

impl EventSink for JsonlSink {
    fn record(&mut self, event: &Event) -> Result<()> {
        serde_json::to_writer(&mut self.out, event).map_err(|e| Error::json(self.label.clone(), e))?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(self.label.clone(), e))
    }
}

/// State captured right after a stage's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub stage: usize,
    pub actors: Vec<ActorMemory>,
    pub console: ConsoleState,
    /// Model the stage's rewards were computed against.
    pub model: RewardModel,
    pub selected: Vec<usize>,
    pub rewards: Vec<RewardRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub model: RewardModel,
    pub actors: Vec<ActorMemory>,
    pub console: ConsoleState,
    pub selected: Vec<usize>,
    pub reference_loss: f64,
    pub snapshots: Vec<StageSnapshot>,
}

/// SHA-256 over the ids as little-endian `u64`s.
pub fn selection_digest(ids: &[usize]) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update((*id as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn align_actors(actors: Vec<ActorMemory>, console: &ConsoleState) -> Result<Vec<ActorMemory>> {
    let mut by_id: HashMap<String, ActorMemory> = HashMap::new();
    for a in actors {
        a.validate()?;
        if by_id.insert(a.actor_id.clone(), a).is_some() {
            return Err(Error::Config("duplicate actor memory".into()));
        }
    }
    let ordered: Vec<ActorMemory> = console
        .thetas
        .keys()
        .map(|id| {
            by_id
                .remove(id)
                .ok_or_else(|| Error::Config(format!("console actor `{id}` has no memory")))
        })
        .collect::<Result<_>>()?;
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Config(format!(
            "actor `{extra}` is not registered with the console"
        )));
    }
    Ok(ordered)
}

struct Stage<'a> {
    corpus: &'a Corpus,
    oracle: &'a RewardOracle,
    run: &'a SelectionRun,
    partitions: &'a [Partition],
}

impl Stage<'_> {
    /// Probes, updates actors and console, returns the new subset.
    fn execute(
        &self,
        index: usize,
        step: usize,
        model: &RewardModel,
        subset: &[usize],
        actors: &mut [ActorMemory],
        console: &mut ConsoleState,
    ) -> Result<(Vec<usize>, StageEvent, Vec<RewardRow>)> {
        let mut aggregates = IndexMap::new();
        let mut subcategory_rewards = IndexMap::new();
        let mut rows = Vec::new();
        let selected = match self.run.selection {
            SelectionMode::Random => {
                let mut rng = stream(self.run.seed, "random-subset", index as u64);
                let mut ids = sample_indices(&mut rng, self.corpus.len(), self.run.k).into_vec();
                ids.sort_unstable();
                ids
            }
            SelectionMode::Console => {
                let active: Vec<String> = console.active_actors().into_iter().map(String::from).collect();
                let probe_seed = derive_seed(self.run.seed, "stage-probe", index as u64);
                let mut samples = Vec::new();
                for id in &active {
                    let j = actors.iter().position(|a| &a.actor_id == id).expect("aligned");
                    samples.push((
                        j,
                        sample_partition(
                            &actors[j],
                            &self.partitions[j],
                            self.run.samples_per_subcategory,
                            probe_seed,
                        )?,
                    ));
                }
                let mut union: Vec<usize> = samples.iter().flat_map(|(_, s)| s.all_ids()).collect();
                union.sort_unstable();
                union.dedup();
                if union.is_empty() {
                    return Err(Error::Data("no actor sampled any point".into()));
                }
                let train: Vec<&DataPoint> = subset.iter().map(|&i| &self.corpus.points()[i]).collect();
                let values = batch_rewards(
                    model,
                    &train,
                    &self.oracle.task,
                    &union,
                    self.corpus,
                    &self.oracle.influence,
                )?;
                let mode = self.oracle.influence.mode.as_str();
                rows = union
                    .iter()
                    .zip(&values)
                    .map(|(&id, &reward)| RewardRow {
                        id,
                        reward,
                        mode: mode.to_string(),
                        stage: index as u64,
                    })
                    .collect();
                let rewards: HashMap<usize, f64> = union.iter().copied().zip(values).collect();

                let mut staged = Vec::new();
                for (j, s) in &samples {
                    let report = compute_subcategory_reward(s, &rewards, index as u64)?;
                    let mut next = actors[*j].clone();
                    next.update(&report)?;
                    let agg = actor_aggregate_reward(&next, &report, console.norm)?;
                    staged.push((*j, next, report, agg));
                }
                for (j, next, report, agg) in staged {
                    subcategory_rewards.insert(
                        next.actor_id.clone(),
                        report
                            .per_subcategory
                            .iter()
                            .map(|(k, v)| (k.clone(), v.mean_reward))
                            .collect(),
                    );
                    aggregates.insert(next.actor_id.clone(), agg);
                    actors[j] = next;
                }
                match console.regime {
                    Regime::Single(_) => console.record(aggregates.clone()),
                    _ => console.update(&aggregates)?,
                }
                let scores = score_corpus(console, actors, self.partitions)?;
                select_top_k_dense(&scores, self.run.k)?
            }
        };
        let event = StageEvent {
            stage: index,
            step,
            selected_digest: selection_digest(&selected),
            selected_count: selected.len(),
            thetas: console.thetas.clone(),
            mean_aggregate: if aggregates.is_empty() {
                None
            } else {
                console.history.last().map(|h| h.mean_aggregate)
            },
            aggregates,
            actor_weights: actors.iter().map(|a| (a.actor_id.clone(), a.weights.clone())).collect(),
            subcategory_rewards,
            reference_loss: self.oracle.task.full_loss(model)?,
        };
        Ok((selected, event, rows))
    }
}

/// Runs `T` training steps with a selection stage every `U` steps.
///
/// Events stream to `sink` as they happen, so a failing stage leaves
/// everything before it recorded.
pub fn run_pipeline(
    corpus: &Corpus,
    actors: Vec<ActorMemory>,
    console: ConsoleState,
    oracle: &RewardOracle,
    run: &SelectionRun,
    sink: &mut dyn EventSink,
) -> Result<PipelineOutcome> {
    run.validate(corpus.len())?;
    console.validate()?;
    oracle.task.validate()?;
    oracle.influence.validate()?;
    if oracle.model.d_f() != corpus.d_f() {
        return Err(Error::Config(format!(
            "model expects {} features, corpus has {}",
            oracle.model.d_f(),
            corpus.d_f()
        )));
    }
    let mut console = console;
    let mut actors = align_actors(actors, &console)?;
    let partitions: Vec<Partition> = actors
        .iter()
        .map(|a| Partition::build(a, corpus))
        .collect::<Result<_>>()?;

    let mut model = oracle.model.clone();
    let mut subset = {
        let mut rng = stream(run.seed, "initial-subset", 0);
        let mut ids = sample_indices(&mut rng, corpus.len(), run.k).into_vec();
        ids.sort_unstable();
        ids
    };
    sink.record(&Event::Start {
        regime: console.regime.to_string(),
        selection: run.selection,
        frozen: console.frozen,
        stages: run.stages(),
        initial_digest: selection_digest(&subset),
    })?;

    let stage = Stage {
        corpus,
        oracle,
        run,
        partitions: &partitions,
    };
    let mut batches = stream(run.seed, "batches", 0);
    let mut snapshots = Vec::new();
    let points = corpus.points();
    for t in 1..=run.total_steps {
        if t % run.update_every == 0 {
            let index = t / run.update_every;
            let (selected, event, rewards) = stage.execute(index, t, &model, &subset, &mut actors, &mut console)?;
            sink.record(&Event::Stage(Box::new(event)))?;
            snapshots.push(StageSnapshot {
                stage: index,
                actors: actors.clone(),
                console: console.clone(),
                model: model.clone(),
                selected: selected.clone(),
                rewards,
            });
            subset = selected;
        }
        let batch: Vec<&DataPoint> = (0..run.batch_size)
            .map(|_| &points[subset[batches.random_range(0..subset.len())]])
            .collect();
        let batch_loss = model.mean_loss(batch.iter().copied())?;
        model.sgd_step(&batch, run.learning_rate)?;
        sink.record(&Event::Step { step: t, batch_loss })?;
    }

    let reference_loss = oracle.task.full_loss(&model)?;
    sink.record(&Event::Final {
        steps: run.total_steps,
        stages: run.stages(),
        reference_loss,
        selected_digest: selection_digest(&subset),
    })?;
    Ok(PipelineOutcome {
        model,
        actors,
        console,
        selected: subset,
        reference_loss,
        snapshots,
    })
}

/// Share of `selected` whose label under `actor_id`'s attribute is `label`.
pub fn subset_share(corpus: &Corpus, selected: &[usize], actor_id: &str, label: &str) -> f64 {
    let attr = crate::actors::Attribute::for_actor(actor_id);
    if selected.is_empty() {
        return 0.0;
    }
    let hits = selected
        .iter()
        .filter(|&&i| attr.label_of(&corpus.points()[i]).is_some_and(|l| l == label))
        .count();
    hits as f64 / selected.len() as f64
}
