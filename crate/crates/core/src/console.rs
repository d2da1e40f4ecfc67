//! The actor console: fuses actor scores with collaborative weights `theta`,
//! adapts `theta` from aggregate rewards and selects the top-k subset.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actors::{ActorMemory, Partition, SubcategoryRewardReport};
use crate::corpus::DataPoint;
use crate::error::{Error, Result};

pub const DEFAULT_CONSOLE_ETA: f64 = 5.0;

/// How actor scores are combined.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Regime {
    /// `S = sum_A theta_A S_A`.
    Collaborative,
    /// `S = S_A` of the actor with the largest `theta` (first registered on ties).
    Competitive,
    /// Only the named actor samples, updates and scores.
    Single(String),
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Collaborative => f.write_str("collaborative"),
            Regime::Competitive => f.write_str("competitive"),
            Regime::Single(id) => write!(f, "single:{id}"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collaborative" => Ok(Regime::Collaborative),
            "competitive" => Ok(Regime::Competitive),
            _ => match s.strip_prefix("single:") {
                Some(id) if !id.is_empty() => Ok(Regime::Single(id.to_string())),
                _ => Err(Error::Config(format!(
                    "unknown regime `{s}` (expected collaborative, competitive or single:<actor>)"
                ))),
            },
        }
    }
}

impl Serialize for Regime {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Regime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The `n` dividing an actor's aggregate reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregateNorm {
    /// Subcategories that had samples this stage.
    #[default]
    Sampled,
    /// Every subcategory of the actor.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: u64,
    /// `theta` after the update.
    pub thetas: IndexMap<String, f64>,
    pub aggregates: IndexMap<String, f64>,
    pub mean_aggregate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleState {
    pub thetas: IndexMap<String, f64>,
    pub eta: f64,
    pub regime: Regime,
    #[serde(default)]
    pub norm: AggregateNorm,
    /// Fixed-weight ablation: rewards still flow to actors but `theta`
    /// never moves.
    #[serde(default)]
    pub frozen: bool,
    #[serde(default)]
    pub history: Vec<StageRecord>,
}

impl ConsoleState {
    /// Uniform `theta = 1/n` over `actor_ids`.
    pub fn new<S: AsRef<str>>(actor_ids: &[S], eta: f64, regime: Regime) -> Result<Self> {
        let n = actor_ids.len();
        let thetas: IndexMap<String, f64> = actor_ids
            .iter()
            .map(|id| (id.as_ref().to_string(), 1.0 / n as f64))
            .collect();
        if thetas.len() != n {
            return Err(Error::Config("duplicate actor id in console".into()));
        }
        let state = Self {
            thetas,
            eta,
            regime,
            norm: AggregateNorm::Sampled,
            frozen: false,
            history: Vec::new(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thetas.is_empty() {
            return Err(Error::Config("console needs at least one actor".into()));
        }
        if let Some((id, t)) = self.thetas.iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::Config(format!("theta of `{id}` is {t}")));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::Config(format!("console eta {} must be >= 0", self.eta)));
        }
        if let Regime::Single(id) = &self.regime {
            if !self.thetas.contains_key(id) {
                return Err(Error::Config(format!("single regime names unregistered actor `{id}`")));
            }
        }
        Ok(())
    }

    /// Actors that sample and update this stage.
    pub fn active_actors(&self) -> Vec<&str> {
        match &self.regime {
            Regime::Single(id) => vec![id.as_str()],
            _ => self.thetas.keys().map(String::as_str).collect(),
        }
    }

    fn leader(&self) -> &str {
        let mut best: Option<(&str, f64)> = None;
        for (id, &t) in &self.thetas {
            if best.is_none_or(|(_, b)| t > b) {
                best = Some((id, t));
            }
        }
        best.map(|(id, _)| id).unwrap_or_default()
    }

    /// Effective per-actor coefficients for the current regime.
    pub fn scoring_weights(&self) -> IndexMap<String, f64> {
        let pick = |chosen: &str| -> IndexMap<String, f64> {
            self.thetas
                .keys()
                .map(|id| (id.clone(), if id == chosen { 1.0 } else { 0.0 }))
                .collect()
        };
        match &self.regime {
            Regime::Collaborative => self.thetas.clone(),
            Regime::Competitive => pick(self.leader()),
            Regime::Single(id) => pick(id),
        }
    }

    /// Applies `theta_A += eta (Rbar_A - Rbar)` for every registered actor.
    /// Rejected without changes on missing, extra or non-finite aggregates.
    pub fn update(&mut self, aggregates: &IndexMap<String, f64>) -> Result<()> {
        if aggregates.len() != self.thetas.len() || self.thetas.keys().any(|id| !aggregates.contains_key(id)) {
            return Err(Error::Data(format!(
                "aggregates for {:?} do not match registered actors {:?}",
                aggregates.keys().collect::<Vec<_>>(),
                self.thetas.keys().collect::<Vec<_>>()
            )));
        }
        if let Some((id, a)) = aggregates.iter().find(|(_, a)| !a.is_finite()) {
            return Err(Error::Data(format!("aggregate reward of `{id}` is {a}")));
        }
        let ordered: Vec<f64> = self.thetas.keys().map(|id| aggregates[id]).collect();
        let mean = shifted_mean(&ordered);
        if !self.frozen {
            for (theta, a) in self.thetas.values_mut().zip(&ordered) {
                *theta += self.eta * (a - mean);
            }
        }
        self.history.push(StageRecord {
            stage: self.history.len() as u64 + 1,
            thetas: self.thetas.clone(),
            aggregates: self.thetas.keys().map(|id| (id.clone(), aggregates[id])).collect(),
            mean_aggregate: mean,
        });
        Ok(())
    }

    /// Records a stage without touching `theta` (single-actor runs).
    pub fn record(&mut self, aggregates: IndexMap<String, f64>) {
        let values: Vec<f64> = aggregates.values().copied().collect();
        self.history.push(StageRecord {
            stage: self.history.len() as u64 + 1,
            thetas: self.thetas.clone(),
            mean_aggregate: if values.is_empty() { 0.0 } else { shifted_mean(&values) },
            aggregates,
        });
    }
}

/// Mean computed as `a_0 + sum(a_i - a_0) / n`, exact for equal inputs.
fn shifted_mean(values: &[f64]) -> f64 {
    let a0 = values[0];
    a0 + values.iter().map(|a| a - a0).sum::<f64>() / values.len() as f64
}

/// Pure form of [`ConsoleState::update`].
pub fn console_update(state: &ConsoleState, aggregates: &IndexMap<String, f64>) -> Result<ConsoleState> {
    let mut next = state.clone();
    next.update(aggregates)?;
    Ok(next)
}

fn find_actor<'a>(actors: &'a [ActorMemory], id: &str) -> Result<&'a ActorMemory> {
    actors
        .iter()
        .find(|a| a.actor_id == id)
        .ok_or_else(|| Error::Config(format!("console actor `{id}` has no memory")))
}

/// `S(x)` under the console's regime.
pub fn console_score(state: &ConsoleState, actors: &[ActorMemory], point: &DataPoint) -> Result<f64> {
    let mut s = 0.0;
    for (id, w) in state.scoring_weights() {
        if state.regime != Regime::Collaborative && w == 0.0 {
            continue;
        }
        s += w * find_actor(actors, &id)?.score(point)?;
    }
    Ok(s)
}

/// Scores every point of a corpus from prebuilt partitions, in id order.
pub fn score_corpus(state: &ConsoleState, actors: &[ActorMemory], partitions: &[Partition]) -> Result<Vec<f64>> {
    let mut terms: Vec<(f64, &ActorMemory, &Partition)> = Vec::new();
    for (id, w) in state.scoring_weights() {
        if state.regime != Regime::Collaborative && w == 0.0 {
            continue;
        }
        let actor = find_actor(actors, &id)?;
        let part = partitions
            .iter()
            .find(|p| p.actor_id == id)
            .ok_or_else(|| Error::Config(format!("no partition for actor `{id}`")))?;
        terms.push((w, actor, part));
    }
    let n = terms.first().map_or(0, |(_, _, p)| p.assignment.len());
    Ok((0..n)
        .into_par_iter()
        .map(|i| terms.iter().map(|(w, a, p)| w * a.weights[p.assignment[i]]).sum())
        .collect())
}

/// `Rbar_A = (1/n) sum_j w^j Rbar^j` over the report's sampled subcategories.
pub fn actor_aggregate_reward(
    actor: &ActorMemory,
    report: &SubcategoryRewardReport,
    norm: AggregateNorm,
) -> Result<f64> {
    let mut total = 0.0;
    let mut sampled = 0usize;
    for (label, mean) in report.sampled() {
        let w = actor.weight(label).ok_or_else(|| Error::Scoring {
            actor: actor.actor_id.clone(),
            label: label.clone(),
        })?;
        total += w * mean;
        sampled += 1;
    }
    if sampled == 0 {
        return Err(Error::Data(format!(
            "actor `{}` has no sampled subcategories, aggregate undefined",
            actor.actor_id
        )));
    }
    let n = match norm {
        AggregateNorm::Sampled => sampled,
        AggregateNorm::All => actor.subcategories.len(),
    };
    Ok(total / n as f64)
}

fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` ids with the highest scores, sorted by descending score then
/// ascending id.
pub fn select_top_k(scores: &[(usize, f64)], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Bounds {
            requested: k,
            available: scores.len(),
        });
    }
    let mut keyed = Vec::with_capacity(scores.len());
    for &(id, s) in scores {
        if s.is_nan() {
            return Err(Error::Data(format!("score of point {id} is NaN")));
        }
        // -0.0 + 0.0 == +0.0, so signed zeros tie
        keyed.push((s + 0.0, id));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, rank_order);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(rank_order);
    Ok(keyed.into_iter().map(|(_, id)| id).collect())
}

/// [`select_top_k`] over scores indexed by id.
pub fn select_top_k_dense(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let pairs: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    select_top_k(&pairs, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::SubcategoryReward;
    use proptest::prelude::*;

    fn aggs(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("collaborative".parse::<Regime>().unwrap(), Regime::Collaborative);
        assert_eq!(
            "single:domain".parse::<Regime>().unwrap(),
            Regime::Single("domain".into())
        );
        assert_eq!(Regime::Single("topic".into()).to_string(), "single:topic");
        assert!("single:".parse::<Regime>().is_err());
        assert!("greedy".parse::<Regime>().is_err());
    }

    #[test]
    fn state_invariants() {
        let s = ConsoleState::new(&["a", "b", "c", "d"], 0.1, Regime::Collaborative).unwrap();
        assert!(s.thetas.values().all(|&t| t == 0.25));
        assert!(ConsoleState::new(&["a", "a"], 0.1, Regime::Collaborative).is_err());
        assert!(ConsoleState::new(&["a"], 0.1, Regime::Single("b".into())).is_err());
        assert!(ConsoleState::new::<&str>(&[], 0.1, Regime::Collaborative).is_err());
    }

    fn three_actors() -> Vec<ActorMemory> {
        ["a", "b", "c"]
            .iter()
            .zip([1.0, 2.0, 3.0])
            .map(|(id, w)| ActorMemory::new(*id, vec![id.to_string()], vec![w], 0.3).unwrap())
            .collect()
    }

    fn labeled(labels: &[(&str, &str)]) -> DataPoint {
        DataPoint {
            id: 0,
            features: vec![],
            domain: "C4".into(),
            quality_score: 3.0,
            quality_interval: 4,
            topic: "Science".into(),
            token_count: 1,
            target: 0.0,
            extra: labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn score_examples() {
        let actors = three_actors();
        let x = labeled(&[("a", "a"), ("b", "b"), ("c", "c")]);
        let mut s = ConsoleState::new(&["a", "b", "c"], 0.1, Regime::Collaborative).unwrap();
        s.thetas = aggs(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        assert!((console_score(&s, &actors, &x).unwrap() - 1.7).abs() < 1e-15);

        s.thetas = aggs(&[("a", 0.0), ("b", 0.0), ("c", 0.0)]);
        assert_eq!(console_score(&s, &actors, &x).unwrap(), 0.0);

        let single = ConsoleState::new(&["b"], 0.1, Regime::Collaborative).unwrap();
        let mut one = single.clone();
        one.thetas["b"] = 1.0;
        assert_eq!(console_score(&one, &actors, &x).unwrap(), 2.0);

        let mut comp = ConsoleState::new(&["a", "b", "c"], 0.1, Regime::Competitive).unwrap();
        comp.thetas = aggs(&[("a", 0.1), ("b", 0.7), ("c", 0.2)]);
        assert_eq!(console_score(&comp, &actors, &x).unwrap(), 2.0);

        let only = ConsoleState::new(&["a", "b", "c"], 0.1, Regime::Single("c".into())).unwrap();
        assert_eq!(console_score(&only, &actors, &x).unwrap(), 3.0);

        let missing = labeled(&[("a", "a"), ("b", "b")]);
        assert!(matches!(
            console_score(&only, &actors, &missing),
            Err(Error::Scoring { .. })
        ));
    }

    #[test]
    fn update_examples() {
        let mut s = ConsoleState::new(&["a", "b", "c"], 0.3, Regime::Collaborative).unwrap();
        s.thetas = aggs(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        s.update(&aggs(&[("a", 0.3), ("b", 0.2), ("c", 0.1)])).unwrap();
        assert!((s.thetas["a"] - 1.03).abs() < 1e-15);
        assert!((s.thetas["b"] - 1.00).abs() < 1e-15);
        assert!((s.thetas["c"] - 0.97).abs() < 1e-15);
        assert!((s.history[0].mean_aggregate - 0.2).abs() < 1e-15);

        let before = s.thetas.clone();
        s.update(&aggs(&[("a", 0.4), ("b", 0.4), ("c", 0.4)])).unwrap();
        assert_eq!(s.thetas, before);
    }

    #[test]
    fn rejected_updates_are_atomic() {
        let mut s = ConsoleState::new(&["a", "b"], 0.3, Regime::Collaborative).unwrap();
        let before = s.clone();
        assert!(s.update(&aggs(&[("a", 0.1), ("b", f64::NAN)])).is_err());
        assert!(s.update(&aggs(&[("a", 0.1)])).is_err());
        assert!(s.update(&aggs(&[("a", 0.1), ("b", 0.2), ("z", 0.0)])).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn frozen_console_keeps_theta() {
        let mut s = ConsoleState::new(&["a", "b"], 0.3, Regime::Collaborative).unwrap();
        s.frozen = true;
        s.update(&aggs(&[("a", 1.0), ("b", -1.0)])).unwrap();
        assert_eq!(s.thetas["a"], 0.5);
        assert_eq!(s.history.len(), 1);
    }

    #[test]
    fn aggregate_examples() {
        let a = ActorMemory::new("x", vec!["p".into(), "q".into(), "r".into()], vec![1.0, 1.0, 0.5], 0.3).unwrap();
        let rep = |means: [Option<f64>; 3]| SubcategoryRewardReport {
            actor_id: "x".into(),
            per_subcategory: ["p", "q", "r"]
                .iter()
                .zip(means)
                .map(|(k, m)| {
                    (
                        k.to_string(),
                        SubcategoryReward {
                            mean_reward: m,
                            sample_count: usize::from(m.is_some()),
                        },
                    )
                })
                .collect(),
            stage_index: 0,
        };
        let two = rep([Some(0.2), Some(0.6), None]);
        assert!((actor_aggregate_reward(&a, &two, AggregateNorm::Sampled).unwrap() - 0.4).abs() < 1e-15);
        assert!((actor_aggregate_reward(&a, &two, AggregateNorm::All).unwrap() - 0.8 / 3.0).abs() < 1e-15);
        let one = rep([None, Some(0.4), None]);
        assert_eq!(actor_aggregate_reward(&a, &one, AggregateNorm::Sampled).unwrap(), 0.4);
        assert!(actor_aggregate_reward(&a, &rep([None, None, None]), AggregateNorm::Sampled).is_err());
    }

    #[test]
    fn top_k_edges() {
        let scores = [(0, 1.0), (1, 3.0), (2, 3.0), (3, -0.0), (4, 0.0)];
        assert_eq!(select_top_k(&scores, 0).unwrap(), Vec::<usize>::new());
        assert_eq!(select_top_k(&scores, 5).unwrap(), vec![1, 2, 0, 3, 4]);
        assert_eq!(select_top_k(&scores, 2).unwrap(), vec![1, 2]);
        assert!(matches!(
            select_top_k(&scores, 6),
            Err(Error::Bounds {
                requested: 6,
                available: 5
            })
        ));
        assert!(select_top_k(&[(0, f64::NAN)], 1).is_err());
    }

    fn sort_oracle(scores: &[(usize, f64)], k: usize) -> Vec<usize> {
        let mut v = scores.to_vec();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        v.into_iter().take(k).map(|(id, _)| id).collect()
    }

    proptest! {
        #[test]
        fn top_k_matches_sort_oracle(
            raw in proptest::collection::vec(-20i32..20, 1..400),
            frac in 0.0f64..=1.0,
        ) {
            let scores: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, s)| (i * 3 + 1, *s as f64 / 4.0)).collect();
            let k = ((scores.len() as f64) * frac) as usize;
            prop_assert_eq!(select_top_k(&scores, k).unwrap(), sort_oracle(&scores, k));
        }

        #[test]
        fn theta_mass_is_conserved(
            eta in 0.0f64..10.0,
            steps in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 1..50),
        ) {
            let mut s = ConsoleState::new(&["a", "b", "c", "d"], eta, Regime::Collaborative).unwrap();
            for a in &steps {
                s.update(&aggs(&[("a", a[0]), ("b", a[1]), ("c", a[2]), ("d", a[3])])).unwrap();
            }
            let total: f64 = s.thetas.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
        }

        #[test]
        fn dominant_actor_ends_on_top(
            eta in 0.01f64..2.0,
            lead in 0.01f64..0.5,
            others in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 2), 200),
        ) {
            let mut s = ConsoleState::new(&["a", "b", "c"], eta, Regime::Collaborative).unwrap();
            for o in &others {
                let top = o[0].max(o[1]) + lead;
                s.update(&aggs(&[("a", top), ("b", o[0]), ("c", o[1])])).unwrap();
            }
            prop_assert!(s.thetas["a"] > s.thetas["b"] && s.thetas["a"] > s.thetas["c"]);
        }
    }
}
