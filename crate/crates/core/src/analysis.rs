//! Per-(domain, quality interval) conflict report: size, topic diversity
//! and mean influence of every cell.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QUALITY_INTERVALS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub domain: String,
    pub quality_interval: u8,
    pub count: usize,
    /// Shannon entropy of the cell's topics over `ln(#registered topics)`.
    pub topic_entropy: Option<f64>,
    pub max_topic_share: Option<f64>,
    pub mean_influence: Option<f64>,
    /// Min-max normalized across nonempty cells.
    pub mean_influence_normalized: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub stage_index: u64,
    pub n_topics: usize,
    /// Domains in registry order, intervals ascending within each domain.
    pub cells: Vec<CellMetrics>,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "domain",
    "quality_interval",
    "count",
    "topic_entropy",
    "max_topic_share",
    "mean_influence",
    "mean_influence_normalized",
];

/// Normalized Shannon entropy of `counts` over `n_categories` outcomes.
pub fn normalized_entropy(counts: &[usize], n_categories: usize) -> Option<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return None;
    }
    if n_categories < 2 {
        return Some(0.0);
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Some((h / (n_categories as f64).ln()).clamp(0.0, 1.0))
}

/// Builds the report from one influence value per point (indexed by id).
/// When every nonempty cell has the same mean influence the normalized
/// value is 0.
pub fn conflict_report(corpus: &Corpus, influence: &[f64], stage_index: u64) -> Result<ConflictReport> {
    if influence.len() != corpus.len() {
        return Err(Error::Data(format!(
            "{} influence values for {} points",
            influence.len(),
            corpus.len()
        )));
    }
    let reg = corpus.registry();
    let n_topics = reg.topics.len();
    let n_int = QUALITY_INTERVALS as usize;
    let cell_count = reg.domains.len() * n_int;
    let mut topic_counts = vec![vec![0usize; n_topics]; cell_count];
    let mut infl_sum = vec![0.0; cell_count];
    for p in corpus.points() {
        let d = reg
            .domains
            .iter()
            .position(|x| x == &p.domain)
            .ok_or_else(|| Error::Data(format!("unregistered domain `{}`", p.domain)))?;
        let t = reg
            .topics
            .iter()
            .position(|x| x == &p.topic)
            .ok_or_else(|| Error::Data(format!("unregistered topic `{}`", p.topic)))?;
        let c = d * n_int + (p.quality_interval as usize - 1);
        topic_counts[c][t] += 1;
        infl_sum[c] += influence[p.id];
    }
    let mut cells: Vec<CellMetrics> = Vec::with_capacity(cell_count);
    for (c, counts) in topic_counts.iter().enumerate() {
        let count: usize = counts.iter().sum();
        let nonempty = count > 0;
        cells.push(CellMetrics {
            domain: reg.domains[c / n_int].clone(),
            quality_interval: (c % n_int + 1) as u8,
            count,
            topic_entropy: normalized_entropy(counts, n_topics),
            max_topic_share: nonempty.then(|| *counts.iter().max().unwrap() as f64 / count as f64),
            mean_influence: nonempty.then(|| infl_sum[c] / count as f64),
            mean_influence_normalized: None,
        });
    }
    let means: Vec<f64> = cells.iter().filter_map(|c| c.mean_influence).collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for cell in &mut cells {
        cell.mean_influence_normalized = cell
            .mean_influence
            .map(|m| if hi > lo { (m - lo) / (hi - lo) } else { 0.0 });
    }
    Ok(ConflictReport {
        stage_index,
        n_topics,
        cells,
    })
}

impl ConflictReport {
    pub fn cell(&self, domain: &str, interval: u8) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.domain == domain && c.quality_interval == interval)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.domain.clone(),
                c.quality_interval.to_string(),
                c.count.to_string(),
                opt(c.topic_entropy),
                opt(c.max_topic_share),
                opt(c.mean_influence),
                opt(c.mean_influence_normalized),
            ])?;
        }
        w.flush().map_err(|e| Error::io("conflict report csv", e))
    }
}

/// Quintile (1..=5) of a value in `[0, 1]`: `<= 0.2` is 1, `>= 0.8` is 5.
pub fn quintile(v: f64) -> u8 {
    if v <= 0.2 {
        1
    } else if v >= 0.8 {
        5
    } else {
        (v * 5.0).ceil().clamp(2.0, 4.0) as u8
    }
}
