//! Influence-based rewards.
//!
//! The reward of a training point is the first-order decrease of the
//! reference loss when that point is upweighted:
//! `r(x) = g_ref^T (H + lambda_d I)^{-1} g_x`, with `H` the mean training
//! Hessian over the current training set, `g_x` the training gradient of
//! `x` and `g_ref` the mean reference-loss gradient. Solves are matrix-free
//! (conjugate gradient over Hessian-vector products).

mod model;
pub mod validate;

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_points, Corpus, DataPoint};
use crate::error::{Error, Result};
use crate::linalg::{conjugate_gradient, dot, CgSettings};
use crate::rng::stream;

pub use model::{ModelKind, RewardModel};

pub const DEFAULT_REFERENCE_SAMPLE: usize = 500;
pub const DEFAULT_PROJECTION_DIM: usize = 128;

fn one() -> f64 {
    1.0
}

/// Held-out evaluation examples standing in for downstream tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTask {
    pub points: Vec<DataPoint>,
    pub sample_size: usize,
    pub seed: u64,
    /// Multiplies every reference-loss term.
    #[serde(default = "one")]
    pub loss_weight: f64,
}

impl ReferenceTask {
    pub fn new(points: Vec<DataPoint>, sample_size: usize, seed: u64) -> Result<Self> {
        let task = Self {
            points,
            sample_size,
            seed,
            loss_weight: 1.0,
        };
        task.validate()?;
        Ok(task)
    }

    /// Loads reference points from a JSON-lines file in the corpus format.
    pub fn load(path: &Path, sample_size: usize, seed: u64) -> Result<Self> {
        Self::new(load_points(path)?, sample_size, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || self.sample_size == 0 {
            return Err(Error::Task("reference task has no points to sample".into()));
        }
        if self.sample_size > self.points.len() {
            return Err(Error::Task(format!(
                "reference sample of {} exceeds the {} available points",
                self.sample_size,
                self.points.len()
            )));
        }
        if !self.loss_weight.is_finite() {
            return Err(Error::Task("reference loss weight must be finite".into()));
        }
        Ok(())
    }

    /// The seeded uniform sample used for rewards, in ascending index order.
    pub fn sample(&self) -> Result<Vec<&DataPoint>> {
        self.validate()?;
        if self.sample_size == self.points.len() {
            return Ok(self.points.iter().collect());
        }
        let mut rng = stream(self.seed, "reference-sample", 0);
        let mut idx = rand::seq::index::sample(&mut rng, self.points.len(), self.sample_size).into_vec();
        idx.sort_unstable();
        Ok(idx.into_iter().map(|i| &self.points[i]).collect())
    }

    /// Weighted mean data loss over the reward sample.
    pub fn loss(&self, model: &RewardModel) -> Result<f64> {
        let sample = self.sample()?;
        Ok(self.loss_weight * model.mean_loss(sample)?)
    }

    /// Mean data loss over every reference point (the evaluation metric).
    pub fn full_loss(&self, model: &RewardModel) -> Result<f64> {
        model.mean_loss(&self.points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceMode {
    Exact,
    Projected,
}

impl InfluenceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InfluenceMode::Exact => "exact",
            InfluenceMode::Projected => "projected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProjectionKind {
    /// Entries `N(0, 1) / sqrt(d)`.
    Gaussian { seed: u64 },
    /// `P = I`; requires `projection_dim == p`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Damping {
    /// `factor * trace(H) / dim`.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InfluenceConfig {
    pub mode: InfluenceMode,
    pub projection_dim: usize,
    pub projection: ProjectionKind,
    pub cg_tolerance: f64,
    /// `None` means `10 * dim`.
    pub cg_max_iters: Option<usize>,
    pub damping: Damping,
}

impl Default for InfluenceConfig {
    fn default() -> Self {
        Self {
            mode: InfluenceMode::Exact,
            projection_dim: DEFAULT_PROJECTION_DIM,
            projection: ProjectionKind::Gaussian { seed: 0 },
            cg_tolerance: 1e-8,
            cg_max_iters: None,
            damping: Damping::Relative(1e-3),
        }
    }
}

impl InfluenceConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn projected(projection_dim: usize, seed: u64) -> Self {
        Self {
            mode: InfluenceMode::Projected,
            projection_dim,
            projection: ProjectionKind::Gaussian { seed },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tolerance > 0.0) {
            return Err(Error::Config("cg_tolerance must be > 0".into()));
        }
        if self.mode == InfluenceMode::Projected && self.projection_dim == 0 {
            return Err(Error::Config("projection_dim must be >= 1".into()));
        }
        match self.damping {
            Damping::Relative(v) | Damping::Absolute(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(Error::Config(format!("damping {v} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    fn settings(&self, dim: usize) -> CgSettings {
        CgSettings {
            tolerance: self.cg_tolerance,
            max_iters: self.cg_max_iters.unwrap_or(10 * dim.max(1)),
        }
    }
}

/// Mean reference-loss gradient over the task's reward sample, scaled by
/// the task's loss weight.
pub fn reference_gradient(model: &RewardModel, task: &ReferenceTask) -> Result<Vec<f64>> {
    let sample = task.sample()?;
    let mut g = vec![0.0; model.p()];
    for x in &sample {
        crate::linalg::axpy(1.0, &model.gradient(x)?, &mut g);
    }
    let s = task.loss_weight / sample.len() as f64;
    g.iter_mut().for_each(|v| *v *= s);
    Ok(g)
}

fn resolve_damping(damping: Damping, diagonal_sum: impl FnOnce() -> Result<f64>, dim: usize) -> Result<f64> {
    match damping {
        Damping::Absolute(v) => Ok(v),
        Damping::Relative(0.0) => Ok(0.0),
        Damping::Relative(f) => Ok(f * diagonal_sum()? / dim as f64),
    }
}

fn basis(p: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[i] = 1.0;
    e
}

/// Damped training-Hessian operator over a training set.
struct Curvature<'a> {
    model: &'a RewardModel,
    train: &'a [&'a DataPoint],
    damping: f64,
}

impl<'a> Curvature<'a> {
    fn new(model: &'a RewardModel, train: &'a [&'a DataPoint], cfg: &InfluenceConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Task("influence needs a nonempty training set".into()));
        }
        let p = model.p();
        let damping = resolve_damping(
            cfg.damping,
            || {
                let mut tr = 0.0;
                for i in 0..p {
                    tr += model.training_hvp(train, &basis(p, i))?[i];
                }
                Ok(tr)
            },
            p,
        )?;
        Ok(Self { model, train, damping })
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.model.training_hvp(self.train, v)?;
        crate::linalg::axpy(self.damping, v, &mut out);
        Ok(out)
    }

    fn solve(&self, b: &[f64], cfg: &InfluenceConfig) -> Result<Vec<f64>> {
        let failure = std::cell::RefCell::new(None);
        let result = conjugate_gradient(
            |v| match self.apply(v) {
                Ok(out) => out,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    vec![f64::NAN; v.len()]
                }
            },
            b,
            cfg.settings(b.len()),
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        Ok(result?.x)
    }
}

/// A `d x p` sketch and the sketched, damped Hessian `P H P^T + lambda_d I`.
struct Sketch {
    rows: Option<Vec<Vec<f64>>>,
    hessian: Vec<Vec<f64>>,
}

impl Sketch {
    fn new(model: &RewardModel, train: &[&DataPoint], cfg: &InfluenceConfig) -> Result<Self> {
        let p = model.p();
        let d = cfg.projection_dim;
        if train.is_empty() {
            return Err(Error::Task("influence needs a nonempty training set".into()));
        }
        let rows = match cfg.projection {
            ProjectionKind::Identity => {
                if d != p {
                    return Err(Error::Config(format!(
                        "identity projection needs projection_dim == p ({d} != {p})"
                    )));
                }
                None
            }
            ProjectionKind::Gaussian { seed } => {
                let mut rng = stream(seed, "projection", p as u64);
                let s = 1.0 / (d as f64).sqrt();
                Some(
                    (0..d)
                        .map(|_| {
                            (0..p)
                                .map(|_| {
                                    let z: f64 = StandardNormal.sample(&mut rng);
                                    z * s
                                })
                                .collect()
                        })
                        .collect::<Vec<Vec<f64>>>(),
                )
            }
        };
        let columns: Vec<Vec<f64>> = (0..d)
            .map(|i| match &rows {
                Some(r) => model.training_hvp(train, &r[i]),
                None => model.training_hvp(train, &basis(p, i)),
            })
            .collect::<Result<_>>()?;
        let mut hessian: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..d)
                    .map(|i| match &rows {
                        Some(r) => dot(&r[j], &columns[i]),
                        None => columns[i][j],
                    })
                    .collect()
            })
            .collect();
        let damping = resolve_damping(cfg.damping, || Ok((0..d).map(|i| hessian[i][i]).sum()), d)?;
        for (i, row) in hessian.iter_mut().enumerate() {
            row[i] += damping;
        }
        Ok(Self { rows, hessian })
    }

    fn project(&self, g: &[f64]) -> Vec<f64> {
        match &self.rows {
            Some(r) => r.iter().map(|row| dot(row, g)).collect(),
            None => g.to_vec(),
        }
    }

    fn solve(&self, b: &[f64], cfg: &InfluenceConfig) -> Result<Vec<f64>> {
        let m = &self.hessian;
        Ok(conjugate_gradient(|v| m.iter().map(|row| dot(row, v)).collect(), b, cfg.settings(b.len()))?.x)
    }
}

/// `r(x)` solving against the training gradient of `x`.
pub fn influence_exact(
    model: &RewardModel,
    train: &[&DataPoint],
    task: &ReferenceTask,
    x: &DataPoint,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    cfg.validate()?;
    if cfg.mode != InfluenceMode::Exact {
        return Err(Error::Config("influence_exact called with projected mode".into()));
    }
    let g_ref = reference_gradient(model, task)?;
    let curvature = Curvature::new(model, train, cfg)?;
    let v = curvature.solve(&model.training_gradient(x)?, cfg)?;
    Ok(dot(&g_ref, &v))
}

/// Sketched `r(x)`: `(P g_ref)^T (P H P^T + lambda_d I)^{-1} (P g_x)`.
pub fn influence_projected(
    model: &RewardModel,
    train: &[&DataPoint],
    task: &ReferenceTask,
    x: &DataPoint,
    cfg: &InfluenceConfig,
) -> Result<f64> {
    cfg.validate()?;
    if cfg.mode != InfluenceMode::Projected {
        return Err(Error::Config("influence_projected called with exact mode".into()));
    }
    let g_ref = reference_gradient(model, task)?;
    let sketch = Sketch::new(model, train, cfg)?;
    let v = sketch.solve(&sketch.project(&model.training_gradient(x)?), cfg)?;
    Ok(dot(&sketch.project(&g_ref), &v))
}

/// The reference-side solve, shared by every point of a batch.
pub struct InfluenceOracle {
    direction: Vec<f64>,
    sketch: Option<Sketch>,
}

impl InfluenceOracle {
    pub fn prepare(
        model: &RewardModel,
        train: &[&DataPoint],
        task: &ReferenceTask,
        cfg: &InfluenceConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let g_ref = reference_gradient(model, task)?;
        match cfg.mode {
            InfluenceMode::Exact => {
                let curvature = Curvature::new(model, train, cfg)?;
                Ok(Self {
                    direction: curvature.solve(&g_ref, cfg)?,
                    sketch: None,
                })
            }
            InfluenceMode::Projected => {
                let sketch = Sketch::new(model, train, cfg)?;
                let direction = sketch.solve(&sketch.project(&g_ref), cfg)?;
                Ok(Self {
                    direction,
                    sketch: Some(sketch),
                })
            }
        }
    }

    pub fn reward(&self, model: &RewardModel, x: &DataPoint) -> Result<f64> {
        let g = model.training_gradient(x)?;
        Ok(match &self.sketch {
            Some(s) => dot(&self.direction, &s.project(&g)),
            None => dot(&self.direction, &g),
        })
    }
}

/// Rewards of `ids`, aligned with `ids` (duplicates allowed).
pub fn batch_rewards(
    model: &RewardModel,
    train: &[&DataPoint],
    task: &ReferenceTask,
    ids: &[usize],
    corpus: &Corpus,
    cfg: &InfluenceConfig,
) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::Task("batch_rewards needs at least one id".into()));
    }
    let points: Vec<&DataPoint> = ids
        .iter()
        .map(|&id| {
            corpus.point(id).ok_or(Error::Bounds {
                requested: id,
                available: corpus.len(),
            })
        })
        .collect::<Result<_>>()?;
    let oracle = InfluenceOracle::prepare(model, train, task, cfg)?;
    points.par_iter().map(|x| oracle.reward(model, x)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub id: usize,
    pub reward: f64,
    pub mode: String,
    pub stage: u64,
}

/// Writes `id,reward,mode,stage` rows.
pub fn write_reward_csv<W: Write>(out: W, rows: &[RewardRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("reward csv", e))
}

pub fn read_reward_csv(path: &Path) -> Result<Vec<RewardRow>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
