//! The labeled pretraining pool.

mod generator;
mod io;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generator::{
    generate_reference_task, generate_synthetic_corpus, CellOffset, CellTopics, GeneratorConfig, TargetKind,
};
pub use io::{header_path, load_points, save_points};

pub const QUALITY_INTERVALS: u8 = 5;

/// Maps a quality score in `[0, 5]` to its interval: `[j-1, j)` is interval
/// `j` for `j = 1..=4`, and the closed `[4, 5]` is interval 5.
pub fn map_quality_interval(score: f64) -> Result<u8> {
    if !(0.0..=5.0).contains(&score) {
        return Err(Error::Domain(format!("quality score {score} is outside [0, 5]")));
    }
    // floor(score) + 1, with the closed top interval absorbing 5.0
    Ok((score.floor() as u8 + 1).min(QUALITY_INTERVALS))
}

/// One corpus document.
///
/// Field order is the JSON-lines column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: usize,
    pub features: Vec<f64>,
    pub domain: String,
    pub quality_score: f64,
    pub quality_interval: u8,
    pub topic: String,
    pub token_count: u32,
    /// Supervised target for the stand-in reward model.
    pub target: f64,
    /// Labels for pluggable criteria beyond quality, domain and topic.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// Registered label sets. Domain and topic labels are per corpus; the
/// defaults below are the SlimPajama domains and the 13-topic schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRegistry {
    pub domains: Vec<String>,
    pub topics: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Vec<String>>,
}

pub const SLIMPAJAMA_DOMAINS: [&str; 7] = [
    "CommonCrawl",
    "C4",
    "GitHub",
    "Books",
    "ArXiv",
    "Wikipedia",
    "StackExchange",
];

/// SlimPajama token proportions in percent, in [`SLIMPAJAMA_DOMAINS`] order.
pub const SLIMPAJAMA_PROPORTIONS: [f64; 7] = [52.20, 26.70, 5.20, 4.20, 4.60, 3.80, 3.30];

pub const DEFAULT_TOPICS: [&str; 13] = [
    "Activity",
    "Education",
    "Entertainment",
    "Finance",
    "Health",
    "Business and Industrial",
    "Infrastructure",
    "Literature and Art",
    "Nature",
    "Others",
    "Law and Government",
    "Networking",
    "Technology",
];

impl Default for LabelRegistry {
    fn default() -> Self {
        Self {
            domains: SLIMPAJAMA_DOMAINS.iter().map(|s| s.to_string()).collect(),
            topics: DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect(),
            extra: BTreeMap::new(),
        }
    }
}

impl LabelRegistry {
    pub fn new(domains: Vec<String>, topics: Vec<String>) -> Self {
        Self {
            domains,
            topics,
            extra: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, labels) in [("domain", &self.domains), ("topic", &self.topics)]
            .into_iter()
            .chain(self.extra.iter().map(|(k, v)| (k.as_str(), v)))
        {
            if labels.is_empty() {
                return Err(Error::Config(format!("no {name} labels registered")));
            }
            let unique: HashSet<_> = labels.iter().collect();
            if unique.len() != labels.len() {
                return Err(Error::Config(format!("duplicate {name} labels registered")));
            }
        }
        Ok(())
    }
}

/// Where a corpus came from. Planted generator parameters live here and are
/// only read by tests and reports, never by actors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Generator {
        seed: u64,
        config: Box<GeneratorConfig>,
        planted: Box<PlantedParameters>,
    },
    Labeled {
        input: String,
    },
    File {
        path: String,
    },
}

/// The generator's hidden ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedParameters {
    /// Parameters of the clean target function shared with the reference task.
    pub reference_parameters: Vec<f64>,
    /// Direction along which corrupted targets are biased.
    pub corruption_direction: Vec<f64>,
    pub domain_offsets: BTreeMap<String, f64>,
    /// Offsets for quality intervals 1..=5.
    pub interval_offsets: Vec<f64>,
    pub topic_offsets: BTreeMap<String, f64>,
    pub cell_offsets: Vec<CellOffset>,
    /// Per-point corruption level; lower is a higher true reward.
    pub corruption: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub d_f: usize,
    pub registry: LabelRegistry,
    pub n_points: usize,
    pub metadata: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    points: Vec<DataPoint>,
    registry: LabelRegistry,
    d_f: usize,
    metadata: Provenance,
}

impl Corpus {
    /// Builds a corpus after checking every invariant: dense unique ids in
    /// order, registered labels, consistent feature dimension, and quality
    /// intervals that agree with the scores.
    pub fn new(points: Vec<DataPoint>, registry: LabelRegistry, d_f: usize, metadata: Provenance) -> Result<Self> {
        registry.validate()?;
        let domains: HashSet<&str> = registry.domains.iter().map(String::as_str).collect();
        let topics: HashSet<&str> = registry.topics.iter().map(String::as_str).collect();
        for (i, p) in points.iter().enumerate() {
            if p.id != i {
                return Err(Error::Data(format!(
                    "point at position {i} has id {}; ids must be dense and ordered",
                    p.id
                )));
            }
            if p.features.len() != d_f {
                return Err(Error::Data(format!(
                    "point {} has {} features, corpus declares {d_f}",
                    p.id,
                    p.features.len()
                )));
            }
            if !domains.contains(p.domain.as_str()) {
                return Err(Error::Registration {
                    attribute: "domain".into(),
                    label: p.domain.clone(),
                });
            }
            if !topics.contains(p.topic.as_str()) {
                return Err(Error::Registration {
                    attribute: "topic".into(),
                    label: p.topic.clone(),
                });
            }
            if map_quality_interval(p.quality_score)? != p.quality_interval {
                return Err(Error::Data(format!(
                    "point {} has quality interval {} but score {}",
                    p.id, p.quality_interval, p.quality_score
                )));
            }
            if p.token_count == 0 {
                return Err(Error::Data(format!("point {} has zero tokens", p.id)));
            }
            for (key, label) in &p.extra {
                let known = registry.extra.get(key).is_some_and(|labels| labels.contains(label));
                if !known {
                    return Err(Error::Registration {
                        attribute: key.clone(),
                        label: label.clone(),
                    });
                }
            }
        }
        Ok(Self {
            points,
            registry,
            d_f,
            metadata,
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn point(&self, id: usize) -> Option<&DataPoint> {
        self.points.get(id)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn d_f(&self) -> usize {
        self.d_f
    }

    pub fn metadata(&self) -> &Provenance {
        &self.metadata
    }

    pub fn planted(&self) -> Option<&PlantedParameters> {
        match &self.metadata {
            Provenance::Generator { planted, .. } => Some(planted),
            _ => None,
        }
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            d_f: self.d_f,
            registry: self.registry.clone(),
            n_points: self.points.len(),
            metadata: self.metadata.clone(),
        }
    }

    /// Writes the points as JSON lines at `path` plus the sidecar header.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        io::save_corpus(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        io::load_corpus(path)
    }

    /// Count of points per label of a categorical attribute, in registry order.
    pub fn histogram(&self, attribute: &str) -> Vec<(String, usize)> {
        let labels: Vec<String> = match attribute {
            "domain" => self.registry.domains.clone(),
            "topic" => self.registry.topics.clone(),
            "quality" => (1..=QUALITY_INTERVALS).map(|j| j.to_string()).collect(),
            other => self.registry.extra.get(other).cloned().unwrap_or_default(),
        };
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &self.points {
            let key: String = match attribute {
                "domain" => p.domain.clone(),
                "topic" => p.topic.clone(),
                "quality" => p.quality_interval.to_string(),
                other => p.extra.get(other).cloned().unwrap_or_default(),
            };
            if let Some(l) = labels.iter().find(|l| **l == key) {
                *counts.entry(l.as_str()).or_default() += 1;
            }
        }
        labels
            .iter()
            .map(|l| (l.clone(), counts.get(l.as_str()).copied().unwrap_or(0)))
            .collect()
    }
}

/// An unlabeled document as it arrives from a source, with its domain taken
/// from source metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub features: Vec<f64>,
    pub domain: String,
    #[serde(default = "default_tokens")]
    pub token_count: u32,
    #[serde(default)]
    pub target: f64,
}

fn default_tokens() -> u32 {
    1024
}

/// Offline labeling: scores every record for quality and topic and derives
/// its quality interval. Work is sharded across threads and merged back in
/// input order, so the result only depends on the inputs.
pub fn label_corpus<Q, T>(
    raw: &[RawRecord],
    quality_fn: Q,
    topic_fn: T,
    registry: LabelRegistry,
    input: &str,
) -> Result<Corpus>
where
    Q: Fn(&[f64]) -> f64 + Sync,
    T: Fn(&[f64]) -> String + Sync,
{
    registry.validate()?;
    let d_f = raw.first().map_or(0, |r| r.features.len());
    let points = raw
        .par_iter()
        .enumerate()
        .map(|(id, record)| {
            let score = quality_fn(&record.features);
            if !(0.0..=5.0).contains(&score) {
                return Err(Error::Labeling(format!(
                    "quality scorer returned {score} for record {id}; expected [0, 5]"
                )));
            }
            let topic = topic_fn(&record.features);
            if !registry.topics.contains(&topic) {
                return Err(Error::Registration {
                    attribute: "topic".into(),
                    label: topic,
                });
            }
            Ok(DataPoint {
                id,
                features: record.features.clone(),
                domain: record.domain.clone(),
                quality_score: score,
                quality_interval: map_quality_interval(score)?,
                topic,
                token_count: record.token_count,
                target: record.target,
                extra: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(
        points,
        registry,
        d_f,
        Provenance::Labeled {
            input: input.to_string(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quality_interval_examples() {
        assert_eq!(map_quality_interval(0.0).unwrap(), 1);
        assert_eq!(map_quality_interval(3.999).unwrap(), 4);
        assert_eq!(map_quality_interval(4.0).unwrap(), 5);
        assert_eq!(map_quality_interval(5.0).unwrap(), 5);
        // interior boundaries are half-open
        assert_eq!(map_quality_interval(1.0).unwrap(), 2);
        assert_eq!(map_quality_interval(3.0).unwrap(), 4);
    }

    #[test]
    fn quality_interval_rejects_out_of_range() {
        for bad in [-0.001, 5.0001, f64::NAN, f64::INFINITY] {
            let err = map_quality_interval(bad).unwrap_err();
            assert!(matches!(err, Error::Domain(_)));
        }
        let msg = map_quality_interval(7.5).unwrap_err().to_string();
        assert!(msg.contains("7.5"), "{msg}");
    }

    proptest! {
        #[test]
        fn quality_interval_is_monotone_and_bounded(a in 0.0f64..=5.0, b in 0.0f64..=5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ilo, ihi) = (map_quality_interval(lo).unwrap(), map_quality_interval(hi).unwrap());
            prop_assert!((1..=5).contains(&ilo) && (1..=5).contains(&ihi));
            prop_assert!(ilo <= ihi);
        }
    }

    fn raw(n: usize) -> Vec<RawRecord> {
        (0..n)
            .map(|i| RawRecord {
                features: vec![i as f64 / n as f64, 1.0 - i as f64 / n as f64],
                domain: if i % 2 == 0 { "C4".into() } else { "Books".into() },
                token_count: 100 + i as u32,
                target: i as f64,
            })
            .collect()
    }

    #[test]
    fn labeling_is_deterministic() {
        let records = raw(200);
        let q = |f: &[f64]| 5.0 * f[0];
        let t = |f: &[f64]| {
            if f[1] > 0.5 {
                "Nature".to_string()
            } else {
                "Finance".to_string()
            }
        };
        let a = label_corpus(&records, q, t, LabelRegistry::default(), "mem").unwrap();
        let b = label_corpus(&records, q, t, LabelRegistry::default(), "mem").unwrap();
        assert_eq!(a, b);
        let ids: Vec<usize> = a.points().iter().map(|p| p.id).collect();
        assert_eq!(ids, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn constant_quality_lands_in_one_interval() {
        let c = label_corpus(
            &raw(50),
            |_| 2.5,
            |_| "Health".to_string(),
            LabelRegistry::default(),
            "mem",
        )
        .unwrap();
        assert!(c.points().iter().all(|p| p.quality_interval == 3));
    }

    #[test]
    fn labeling_errors() {
        let err = label_corpus(
            &raw(5),
            |_| 6.0,
            |_| "Health".to_string(),
            LabelRegistry::default(),
            "mem",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Labeling(_)));

        let err = label_corpus(
            &raw(5),
            |_| 1.0,
            |_| "Astrology".to_string(),
            LabelRegistry::default(),
            "mem",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Registration { ref label, .. } if label == "Astrology"));
    }

    #[test]
    fn corpus_rejects_unregistered_domain_and_sparse_ids() {
        let mut c = label_corpus(
            &raw(3),
            |_| 1.0,
            |_| "Health".to_string(),
            LabelRegistry::default(),
            "mem",
        )
        .unwrap();
        let mut pts = c.points().to_vec();
        pts[1].domain = "Usenet".into();
        let err = Corpus::new(pts, c.registry().clone(), 2, c.metadata().clone()).unwrap_err();
        assert!(matches!(err, Error::Registration { .. }));

        c.points[2].id = 7;
        let err = Corpus::new(c.points().to_vec(), c.registry().clone(), 2, c.metadata().clone()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
