//! Seeded synthetic corpora with planted reward structure.
//!
//! Every point's target follows a shared clean linear function of its
//! features, biased along a fixed corruption direction by an amount set by
//! its labels: `s = max(0, base + o_domain + o_interval + o_topic + o_cell)`.
//! Training on low-corruption points moves the model toward the reference
//! task, so a subcategory with lower offsets carries a higher true reward.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    map_quality_interval, Corpus, DataPoint, LabelRegistry, PlantedParameters, Provenance, DEFAULT_TOPICS,
    QUALITY_INTERVALS, SLIMPAJAMA_DOMAINS, SLIMPAJAMA_PROPORTIONS,
};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Regression,
    /// Bernoulli labels through a logistic link.
    Binary,
}

/// Fixed topic distribution for one (domain, quality interval) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTopics {
    pub domain: String,
    pub interval: u8,
    /// Unnormalized weights in topic registry order.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOffset {
    pub domain: String,
    pub interval: u8,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_points: usize,
    pub d_f: usize,
    pub domains: Vec<String>,
    /// Fractions summing to one.
    pub domain_proportions: Vec<f64>,
    pub topics: Vec<String>,
    /// Mean quality score per domain before clamping to [0, 5].
    pub quality_means: Vec<f64>,
    pub quality_sd: f64,
    /// Spread of the per-domain topic logits; 0 gives uniform topics.
    pub topic_concentration: f64,
    pub cell_topics: Vec<CellTopics>,
    pub base_corruption: f64,
    pub domain_offsets: Vec<f64>,
    pub interval_offsets: Vec<f64>,
    /// Explicit topic offsets; drawn from N(0, topic_offset_sd) when absent.
    pub topic_offsets: Option<Vec<f64>>,
    pub topic_offset_sd: f64,
    pub cell_offsets: Vec<CellOffset>,
    /// Norm of the corruption direction.
    pub corruption_scale: f64,
    pub label_noise: f64,
    pub target: TargetKind,
    pub min_tokens: u32,
    pub max_tokens: u32,
    /// Store a linear encoding of the quality score in the last feature.
    pub encode_quality_feature: bool,
    pub reference_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let n_domains = SLIMPAJAMA_DOMAINS.len();
        Self {
            n_points: 20_000,
            d_f: 8,
            domains: SLIMPAJAMA_DOMAINS.iter().map(|s| s.to_string()).collect(),
            domain_proportions: SLIMPAJAMA_PROPORTIONS.iter().map(|p| p / 100.0).collect(),
            topics: DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect(),
            quality_means: vec![2.0, 2.2, 2.5, 3.0, 3.2, 3.0, 2.8],
            quality_sd: 1.0,
            topic_concentration: 0.3,
            cell_topics: Vec::new(),
            base_corruption: 0.0,
            domain_offsets: vec![0.0; n_domains],
            interval_offsets: vec![0.0; QUALITY_INTERVALS as usize],
            topic_offsets: None,
            topic_offset_sd: 0.0,
            cell_offsets: Vec::new(),
            corruption_scale: 1.0,
            label_noise: 0.2,
            target: TargetKind::Regression,
            min_tokens: 256,
            max_tokens: 4096,
            encode_quality_feature: false,
            reference_size: 2_000,
        }
    }
}

impl GeneratorConfig {
    /// Domain proportions given in percent (as in published mixture tables).
    pub fn with_domain_percentages(mut self, percentages: &[f64]) -> Self {
        self.domain_proportions = percentages.iter().map(|p| p / 100.0).collect();
        self
    }

    pub fn registry(&self) -> LabelRegistry {
        LabelRegistry::new(self.domains.clone(), self.topics.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.n_points == 0 || self.d_f == 0 {
            return cfg("n_points and d_f must be positive".into());
        }
        let n_dom = self.domains.len();
        if self.domain_proportions.len() != n_dom {
            return cfg(format!(
                "{} domain proportions for {n_dom} domains",
                self.domain_proportions.len()
            ));
        }
        if self.domain_proportions.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return cfg("domain proportions must be finite and nonnegative".into());
        }
        let total: f64 = self.domain_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return cfg(format!("domain proportions sum to {total}, expected 1"));
        }
        if self.quality_means.len() != n_dom || self.domain_offsets.len() != n_dom {
            return cfg("quality_means and domain_offsets need one entry per domain".into());
        }
        if self.interval_offsets.len() != QUALITY_INTERVALS as usize {
            return cfg("interval_offsets needs one entry per quality interval".into());
        }
        if let Some(t) = &self.topic_offsets {
            if t.len() != self.topics.len() {
                return cfg("topic_offsets needs one entry per topic".into());
            }
        }
        for cell in &self.cell_topics {
            if !self.domains.contains(&cell.domain) || !(1..=5).contains(&cell.interval) {
                return cfg(format!("unknown cell ({}, {})", cell.domain, cell.interval));
            }
            if cell.weights.len() != self.topics.len()
                || cell.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || cell.weights.iter().sum::<f64>() <= 0.0
            {
                return cfg(format!(
                    "cell ({}, {}) topic weights must be nonnegative, one per topic, not all zero",
                    cell.domain, cell.interval
                ));
            }
        }
        for cell in &self.cell_offsets {
            if !self.domains.contains(&cell.domain) || !(1..=5).contains(&cell.interval) {
                return cfg(format!("unknown cell ({}, {})", cell.domain, cell.interval));
            }
        }
        if self.quality_sd < 0.0 || self.label_noise < 0.0 || self.topic_offset_sd < 0.0 {
            return cfg("standard deviations must be nonnegative".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return cfg("token range must satisfy 0 < min_tokens <= max_tokens".into());
        }
        if self.encode_quality_feature && self.d_f < 2 {
            return cfg("encode_quality_feature needs d_f >= 2".into());
        }
        self.registry().validate()
    }
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

struct World {
    beta: Vec<f64>,
    delta: Vec<f64>,
    topic_offsets: Vec<f64>,
}

fn world(config: &GeneratorConfig, seed: u64) -> World {
    let d = config.d_f;
    let beta = normal_vec(&mut stream(seed, "generator:beta", 0), d);
    let mut delta = normal_vec(&mut stream(seed, "generator:delta", 0), d);
    let norm = crate::linalg::norm(&delta).max(f64::MIN_POSITIVE);
    crate::linalg::scale(config.corruption_scale / norm, &mut delta);
    let topic_offsets = match &config.topic_offsets {
        Some(t) => t.clone(),
        None => {
            let mut rng = stream(seed, "generator:topic-offsets", 0);
            (0..config.topics.len())
                .map(|_| config.topic_offset_sd * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    World {
        beta,
        delta,
        topic_offsets,
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn draw_target(
    config: &GeneratorConfig,
    rng: &mut Rng,
    features: &[f64],
    beta: &[f64],
    delta: &[f64],
    corruption: f64,
) -> f64 {
    let clean = crate::linalg::dot(features, beta);
    let bias = corruption * crate::linalg::dot(features, delta);
    match config.target {
        TargetKind::Regression => clean + bias + config.label_noise * rng.sample::<f64, _>(StandardNormal),
        TargetKind::Binary => {
            let u: f64 = rng.random();
            if u < sigmoid(clean + bias) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Generates a labeled corpus whose proportions and planted rewards follow
/// `config`. The planted parameters are recorded in the corpus metadata.
pub fn generate_synthetic_corpus(config: &GeneratorConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let World {
        beta,
        delta,
        topic_offsets,
    } = world(config, seed);
    let n_dom = config.domains.len();
    let n_top = config.topics.len();

    // per-domain topic weights, overridden per cell where configured
    let mut logit_rng = stream(seed, "generator:topic-logits", 0);
    let domain_topics: Vec<Vec<f64>> = (0..n_dom)
        .map(|_| {
            (0..n_top)
                .map(|_| (config.topic_concentration * logit_rng.sample::<f64, _>(StandardNormal)).exp())
                .collect()
        })
        .collect();
    let mut topic_dists: Vec<Vec<WeightedIndex<f64>>> = Vec::with_capacity(n_dom);
    for (d, weights) in domain_topics.iter().enumerate() {
        let mut row = Vec::with_capacity(QUALITY_INTERVALS as usize);
        for interval in 1..=QUALITY_INTERVALS {
            let w = config
                .cell_topics
                .iter()
                .find(|c| c.domain == config.domains[d] && c.interval == interval)
                .map_or(weights, |c| &c.weights);
            row.push(WeightedIndex::new(w).map_err(|e| Error::Config(e.to_string()))?);
        }
        topic_dists.push(row);
    }
    let mut cell_offset = vec![[0.0f64; QUALITY_INTERVALS as usize]; n_dom];
    for c in &config.cell_offsets {
        let d = config.domains.iter().position(|x| *x == c.domain).unwrap_or(0);
        cell_offset[d][c.interval as usize - 1] += c.offset;
    }

    let domain_dist = WeightedIndex::new(&config.domain_proportions).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = stream(seed, "generator:points", 0);
    let mut points = Vec::with_capacity(config.n_points);
    let mut corruption = Vec::with_capacity(config.n_points);
    for id in 0..config.n_points {
        let d = domain_dist.sample(&mut rng);
        let raw_score: f64 = config.quality_means[d] + config.quality_sd * rng.sample::<f64, _>(StandardNormal);
        let score = raw_score.clamp(0.0, 5.0);
        let interval = map_quality_interval(score)?;
        let t = topic_dists[d][interval as usize - 1].sample(&mut rng);
        let mut features = normal_vec(&mut rng, config.d_f);
        if config.encode_quality_feature {
            features[config.d_f - 1] = (score - 2.5) / 1.25;
        }
        let tokens = rng.random_range(config.min_tokens..=config.max_tokens);
        let s = (config.base_corruption
            + config.domain_offsets[d]
            + config.interval_offsets[interval as usize - 1]
            + topic_offsets[t]
            + cell_offset[d][interval as usize - 1])
            .max(0.0);
        let target = draw_target(config, &mut rng, &features, &beta, &delta, s);
        corruption.push(s);
        points.push(DataPoint {
            id,
            features,
            domain: config.domains[d].clone(),
            quality_score: score,
            quality_interval: interval,
            topic: config.topics[t].clone(),
            token_count: tokens,
            target,
            extra: BTreeMap::new(),
        });
    }

    let planted = PlantedParameters {
        reference_parameters: beta,
        corruption_direction: delta,
        domain_offsets: config
            .domains
            .iter()
            .cloned()
            .zip(config.domain_offsets.iter().copied())
            .collect(),
        interval_offsets: config.interval_offsets.clone(),
        topic_offsets: config.topics.iter().cloned().zip(topic_offsets).collect(),
        cell_offsets: config.cell_offsets.clone(),
        corruption,
    };
    Corpus::new(
        points,
        config.registry(),
        config.d_f,
        Provenance::Generator {
            seed,
            config: Box::new(config.clone()),
            planted: Box::new(planted),
        },
    )
}

/// Clean reference points for the same world (zero corruption). They are
/// labeled with the placeholder domain and topic `reference`.
pub fn generate_reference_task(config: &GeneratorConfig, seed: u64) -> Result<Vec<DataPoint>> {
    config.validate()?;
    let World { beta, delta, .. } = world(config, seed);
    let mut rng = stream(seed, "generator:reference", 0);
    Ok((0..config.reference_size)
        .map(|id| {
            let features = normal_vec(&mut rng, config.d_f);
            let target = draw_target(config, &mut rng, &features, &beta, &delta, 0.0);
            DataPoint {
                id,
                features,
                domain: "reference".into(),
                quality_score: 5.0,
                quality_interval: 5,
                topic: "reference".into(),
                token_count: config.min_tokens,
                target,
                extra: BTreeMap::new(),
            }
        })
        .collect())
}
