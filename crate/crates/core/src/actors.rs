//! Actors: one attribute, one weight per subcategory.
//!
//! An actor samples uniformly across its subcategories, averages the
//! rewards of each subcategory's sample, folds those means into its weights
//! with a sliding average `w <- (1 - eta) w + eta * mean`, and scores any
//! point with the weight of the subcategory it belongs to.

use std::borrow::Cow;
use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DataPoint, LabelRegistry, QUALITY_INTERVALS};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Sliding factor used when none is configured.
pub const DEFAULT_ETA: f64 = 0.3;
/// Per-subcategory probe size used when none is configured.
pub const DEFAULT_SAMPLES_PER_SUBCATEGORY: usize = 500;

/// The point attribute an actor is defined over.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Attribute {
    Quality,
    Domain,
    Topic,
    /// A pluggable criterion read from `DataPoint::extra[key]`.
    Extra(String),
}

impl Attribute {
    /// Actor ids `quality`, `domain` and `topic` map to the built-in
    /// attributes; any other id names an extra label.
    pub fn for_actor(actor_id: &str) -> Self {
        match actor_id {
            "quality" => Attribute::Quality,
            "domain" => Attribute::Domain,
            "topic" => Attribute::Topic,
            other => Attribute::Extra(other.to_string()),
        }
    }

    pub fn label_of<'a>(&self, point: &'a DataPoint) -> Option<Cow<'a, str>> {
        match self {
            Attribute::Quality => Some(Cow::Owned(point.quality_interval.to_string())),
            Attribute::Domain => Some(Cow::Borrowed(&point.domain)),
            Attribute::Topic => Some(Cow::Borrowed(&point.topic)),
            Attribute::Extra(key) => point.extra.get(key).map(|s| Cow::Borrowed(s.as_str())),
        }
    }

    pub fn registered_labels(&self, registry: &LabelRegistry) -> Result<Vec<String>> {
        match self {
            Attribute::Quality => Ok((1..=QUALITY_INTERVALS).map(|j| j.to_string()).collect()),
            Attribute::Domain => Ok(registry.domains.clone()),
            Attribute::Topic => Ok(registry.topics.clone()),
            Attribute::Extra(key) => registry
                .extra
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no labels registered for `{key}`"))),
        }
    }
}

/// Persistent state of one actor. Serialized as
/// `{actor_id, subcategories, weights, eta, stage_count}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorMemory {
    pub actor_id: String,
    pub subcategories: Vec<String>,
    pub weights: Vec<f64>,
    pub eta: f64,
    pub stage_count: u64,
}

impl ActorMemory {
    pub fn new(actor_id: impl Into<String>, subcategories: Vec<String>, weights: Vec<f64>, eta: f64) -> Result<Self> {
        let actor = Self {
            actor_id: actor_id.into(),
            subcategories,
            weights,
            eta,
            stage_count: 0,
        };
        actor.validate()?;
        Ok(actor)
    }

    /// An actor over every registered label of its attribute, all weights
    /// set to `initial`.
    pub fn for_registry(actor_id: &str, registry: &LabelRegistry, initial: f64, eta: f64) -> Result<Self> {
        let subcategories = Attribute::for_actor(actor_id).registered_labels(registry)?;
        let weights = vec![initial; subcategories.len()];
        Self::new(actor_id, subcategories, weights, eta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.subcategories.len() {
            return Err(Error::Config(format!(
                "actor `{}` has {} weights for {} subcategories",
                self.actor_id,
                self.weights.len(),
                self.subcategories.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config(format!(
                "actor `{}` has non-finite weights",
                self.actor_id
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!(
                "actor `{}` sliding factor {} is outside [0, 1]",
                self.actor_id, self.eta
            )));
        }
        Ok(())
    }

    pub fn attribute(&self) -> Attribute {
        Attribute::for_actor(&self.actor_id)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.subcategories.iter().position(|s| s == label)
    }

    pub fn weight(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|j| self.weights[j])
    }

    /// `S_A(x)`: the weight of the subcategory `point` belongs to.
    pub fn score(&self, point: &DataPoint) -> Result<f64> {
        let label = self.attribute().label_of(point).ok_or_else(|| Error::Scoring {
            actor: self.actor_id.clone(),
            label: "<missing>".into(),
        })?;
        self.weight(&label).ok_or_else(|| Error::Scoring {
            actor: self.actor_id.clone(),
            label: label.into_owned(),
        })
    }

    /// Folds one stage's rewards into the weights. Subcategories without
    /// samples keep their weight. The report is checked in full before any
    /// weight changes.
    pub fn update(&mut self, report: &SubcategoryRewardReport) -> Result<()> {
        if report.actor_id != self.actor_id {
            return Err(Error::Data(format!(
                "report for `{}` applied to actor `{}`",
                report.actor_id, self.actor_id
            )));
        }
        let mut staged = Vec::new();
        for (label, entry) in &report.per_subcategory {
            let Some(mean) = entry.mean_reward else {
                continue;
            };
            if entry.sample_count == 0 {
                continue;
            }
            if !mean.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite mean reward {mean} for `{label}` in actor `{}`",
                    self.actor_id
                )));
            }
            let j = self.index_of(label).ok_or_else(|| Error::Scoring {
                actor: self.actor_id.clone(),
                label: label.clone(),
            })?;
            staged.push((j, mean));
        }
        for (j, mean) in staged {
            self.weights[j] = (1.0 - self.eta) * self.weights[j] + self.eta * mean;
        }
        self.stage_count += 1;
        Ok(())
    }
}

/// Subcategory membership of every corpus point for one actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub actor_id: String,
    /// Subcategory index of each point, by id.
    pub assignment: Vec<usize>,
    /// Point ids of each subcategory, ascending.
    pub members: Vec<Vec<usize>>,
}

impl Partition {
    pub fn build(actor: &ActorMemory, corpus: &Corpus) -> Result<Self> {
        let attribute = actor.attribute();
        let lookup: HashMap<&str, usize> = actor
            .subcategories
            .iter()
            .enumerate()
            .map(|(j, s)| (s.as_str(), j))
            .collect();
        let mut assignment = Vec::with_capacity(corpus.len());
        let mut members = vec![Vec::new(); actor.subcategories.len()];
        for p in corpus.points() {
            let label = attribute.label_of(p).ok_or_else(|| Error::Scoring {
                actor: actor.actor_id.clone(),
                label: "<missing>".into(),
            })?;
            let j = *lookup.get(label.as_ref()).ok_or_else(|| Error::Scoring {
                actor: actor.actor_id.clone(),
                label: label.to_string(),
            })?;
            assignment.push(j);
            members[j].push(p.id);
        }
        Ok(Self {
            actor_id: actor.actor_id.clone(),
            assignment,
            members,
        })
    }

    /// Scores every point with the actor's current weights.
    pub fn scores(&self, actor: &ActorMemory) -> Vec<f64> {
        self.assignment.iter().map(|&j| actor.weights[j]).collect()
    }
}

/// Ids drawn for each subcategory in one probing round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub actor_id: String,
    pub per_subcategory: IndexMap<String, Vec<usize>>,
    /// Subcategories with no points at all.
    pub empty: Vec<String>,
}

impl SampleSet {
    pub fn all_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_subcategory.values().flatten().copied()
    }
}

/// Draws `m` ids uniformly without replacement from each subcategory
/// (all of them when a subcategory has fewer than `m`).
pub fn actor_sample(actor: &ActorMemory, corpus: &Corpus, m: usize, seed: u64) -> Result<SampleSet> {
    let partition = Partition::build(actor, corpus)?;
    sample_partition(actor, &partition, m, seed)
}

pub fn sample_partition(actor: &ActorMemory, partition: &Partition, m: usize, seed: u64) -> Result<SampleSet> {
    if m == 0 {
        return Err(Error::Config("samples per subcategory must be >= 1".into()));
    }
    let mut rng = stream(seed, &format!("actor-sample:{}", actor.actor_id), 0);
    let mut per_subcategory = IndexMap::with_capacity(actor.subcategories.len());
    let mut empty = Vec::new();
    for (label, members) in actor.subcategories.iter().zip(&partition.members) {
        let ids = if members.len() <= m {
            members.clone()
        } else {
            rand::seq::index::sample(&mut rng, members.len(), m)
                .into_iter()
                .map(|i| members[i])
                .collect()
        };
        if members.is_empty() {
            empty.push(label.clone());
        }
        per_subcategory.insert(label.clone(), ids);
    }
    Ok(SampleSet {
        actor_id: actor.actor_id.clone(),
        per_subcategory,
        empty,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryReward {
    pub mean_reward: Option<f64>,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcategoryRewardReport {
    pub actor_id: String,
    pub per_subcategory: IndexMap<String, SubcategoryReward>,
    pub stage_index: u64,
}

impl SubcategoryRewardReport {
    /// A report where every listed subcategory has the same mean.
    pub fn constant(actor: &ActorMemory, mean: f64, stage_index: u64) -> Self {
        Self {
            actor_id: actor.actor_id.clone(),
            per_subcategory: actor
                .subcategories
                .iter()
                .map(|s| {
                    (
                        s.clone(),
                        SubcategoryReward {
                            mean_reward: Some(mean),
                            sample_count: 1,
                        },
                    )
                })
                .collect(),
            stage_index,
        }
    }

    pub fn sampled(&self) -> impl Iterator<Item = (&String, f64)> {
        self.per_subcategory
            .iter()
            .filter_map(|(k, v)| v.mean_reward.filter(|_| v.sample_count > 0).map(|m| (k, m)))
    }
}

/// Mean reward of each subcategory's sample.
pub fn compute_subcategory_reward(
    samples: &SampleSet,
    rewards: &HashMap<usize, f64>,
    stage_index: u64,
) -> Result<SubcategoryRewardReport> {
    let mut per_subcategory = IndexMap::with_capacity(samples.per_subcategory.len());
    for (label, ids) in &samples.per_subcategory {
        let mut sum = 0.0;
        for id in ids {
            sum += rewards
                .get(id)
                .ok_or_else(|| Error::Data(format!("no reward for sampled point {id}")))?;
        }
        let entry = SubcategoryReward {
            mean_reward: (!ids.is_empty()).then(|| sum / ids.len() as f64),
            sample_count: ids.len(),
        };
        per_subcategory.insert(label.clone(), entry);
    }
    Ok(SubcategoryRewardReport {
        actor_id: samples.actor_id.clone(),
        per_subcategory,
        stage_index,
    })
}
