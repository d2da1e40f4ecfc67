//! Mixture-regression initialization of actor weights.
//!
//! Sample mixture configurations over one actor's subcategories, score each
//! with a proxy objective, regress loss on proportions, search the simplex
//! for the predicted-best mixture and turn it into starting weights.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::Gamma;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actors::{ActorMemory, Attribute, Partition};
use crate::corpus::{Corpus, DataPoint};
use crate::error::{Error, Result};
use crate::reward::validate::{newton_fit, NewtonSettings};
use crate::reward::{ReferenceTask, RewardModel};
use crate::rng::{derive_seed, stream, Rng};

pub const DEFAULT_CONFIGS: usize = 512;
pub const DEFAULT_CANDIDATES: usize = 100_000;
pub const DEFAULT_CONCENTRATION: f64 = 10.0;
const ALPHA_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub attribute: String,
    pub proportions: Vec<f64>,
    pub config_id: usize,
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.proportions.iter().sum();
        if self.proportions.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "mixture {} is not on the simplex (sum {sum})",
                self.config_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvaluatorTag {
    ClosedForm,
    TrainedProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyEvaluation {
    pub config_id: usize,
    pub validation_loss: f64,
    pub evaluator: EvaluatorTag,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorFamily {
    /// `sum_j c_j p_j`
    Linear,
    /// `sum_j c_j p_j + sum_{i<j} c_ij p_i p_j`, ridge-regularized.
    #[default]
    QuadraticRidge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    pub family: RegressorFamily,
    pub n_components: usize,
    pub coefficients: Vec<f64>,
    /// Coefficient of determination on the held-out split.
    pub training_r2: f64,
}

fn design_row(family: RegressorFamily, p: &[f64]) -> Vec<f64> {
    let mut row = p.to_vec();
    if family == RegressorFamily::QuadraticRidge {
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                row.push(p[i] * p[j]);
            }
        }
    }
    row
}

impl FittedRegressor {
    pub fn predict(&self, proportions: &[f64]) -> f64 {
        crate::linalg::dot(&self.coefficients, &design_row(self.family, proportions))
    }
}

/// Draws `n_configs` mixtures: config 0 is `natural`, the rest come from a
/// Dirichlet with `alpha_j = max(0.05, concentration * natural_j)`.
pub fn sample_mixtures(
    attribute: &str,
    natural: &[f64],
    n_configs: usize,
    concentration: f64,
    seed: u64,
) -> Result<Vec<MixtureConfig>> {
    let n = natural.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "`{attribute}` has {n} subcategories, nothing to mix"
        )));
    }
    if n_configs < n + 1 {
        return Err(Error::Config(format!(
            "{n_configs} configs cannot identify a regression over {n} components"
        )));
    }
    if !(concentration > 0.0) {
        return Err(Error::Config("concentration must be > 0".into()));
    }
    let first = MixtureConfig {
        attribute: attribute.to_string(),
        proportions: natural.to_vec(),
        config_id: 0,
    };
    first.validate()?;
    let alpha: Vec<f64> = natural.iter().map(|p| (concentration * p).max(ALPHA_FLOOR)).collect();
    let mut rng = stream(seed, "mixtures", 0);
    let mut configs = vec![first];
    for config_id in 1..n_configs {
        configs.push(MixtureConfig {
            attribute: attribute.to_string(),
            proportions: dirichlet(&mut rng, &alpha)?,
            config_id,
        });
    }
    Ok(configs)
}

fn dirichlet(rng: &mut Rng, alpha: &[f64]) -> Result<Vec<f64>> {
    loop {
        let mut draws = Vec::with_capacity(alpha.len());
        for &a in alpha {
            let g = Gamma::new(a, 1.0).map_err(|e| Error::Config(format!("Dirichlet alpha {a}: {e}")))?;
            draws.push(g.sample(rng));
        }
        let s: f64 = draws.iter().sum();
        if s > 0.0 && s.is_finite() {
            return Ok(draws.into_iter().map(|g| g / s).collect());
        }
    }
}

/// Scores one mixture; lower is better.
pub trait ProxyEvaluator: Sync {
    fn tag(&self) -> EvaluatorTag;
    fn evaluate(&self, mixture: &MixtureConfig) -> Result<f64>;
}

/// Any closed-form loss surface over proportions.
pub struct ClosedForm<F>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> ProxyEvaluator for ClosedForm<F> {
    fn tag(&self) -> EvaluatorTag {
        EvaluatorTag::ClosedForm
    }

    fn evaluate(&self, mixture: &MixtureConfig) -> Result<f64> {
        Ok((self.0)(&mixture.proportions))
    }
}

/// `offset + (p - center)^T A (p - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSurface {
    pub center: Vec<f64>,
    pub curvature: Vec<Vec<f64>>,
    pub offset: f64,
}

impl QuadraticSurface {
    pub fn value(&self, p: &[f64]) -> f64 {
        let d: Vec<f64> = p.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let ad: Vec<f64> = self.curvature.iter().map(|row| crate::linalg::dot(row, &d)).collect();
        self.offset + crate::linalg::dot(&d, &ad)
    }
}

impl ProxyEvaluator for QuadraticSurface {
    fn tag(&self) -> EvaluatorTag {
        EvaluatorTag::ClosedForm
    }

    fn evaluate(&self, mixture: &MixtureConfig) -> Result<f64> {
        Ok(self.value(&mixture.proportions))
    }
}

/// `sum_j c_j p_j + penalty * sum_j p_j^2`: an expected per-subcategory cost
/// with a concentration penalty that keeps the optimum off the vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSurface {
    pub costs: Vec<f64>,
    pub concentration_penalty: f64,
}

impl CostSurface {
    pub fn value(&self, p: &[f64]) -> f64 {
        crate::linalg::dot(&self.costs, p) + self.concentration_penalty * crate::linalg::dot(p, p)
    }
}

impl ProxyEvaluator for CostSurface {
    fn tag(&self) -> EvaluatorTag {
        EvaluatorTag::ClosedForm
    }

    fn evaluate(&self, mixture: &MixtureConfig) -> Result<f64> {
        if mixture.proportions.len() != self.costs.len() {
            return Err(Error::Config(format!(
                "mixture {} has {} components for {} costs",
                mixture.config_id,
                mixture.proportions.len(),
                self.costs.len()
            )));
        }
        Ok(self.value(&mixture.proportions))
    }
}

/// Mean planted corruption of each of the actor's subcategories, read from
/// generator metadata. Empty subcategories get the largest observed cost.
pub fn planted_subcategory_costs(corpus: &Corpus, actor: &ActorMemory) -> Result<Vec<f64>> {
    let planted = corpus
        .planted()
        .ok_or_else(|| Error::Config("corpus carries no planted parameters".into()))?;
    let partition = Partition::build(actor, corpus)?;
    let means: Vec<Option<f64>> = partition
        .members
        .iter()
        .map(|ids| {
            (!ids.is_empty()).then(|| ids.iter().map(|&i| planted.corruption[i]).sum::<f64>() / ids.len() as f64)
        })
        .collect();
    let worst = means.iter().flatten().copied().fold(0.0, f64::max);
    Ok(means.into_iter().map(|m| m.unwrap_or(worst)).collect())
}

/// Subcategory shares of the corpus under the actor's attribute.
pub fn natural_proportions(corpus: &Corpus, actor: &ActorMemory) -> Result<Vec<f64>> {
    let partition = Partition::build(actor, corpus)?;
    let n = corpus.len() as f64;
    Ok(partition.members.iter().map(|m| m.len() as f64 / n).collect())
}

/// Trains a small model on a sample drawn according to the mixture and
/// reports its loss on the full reference set.
pub struct TrainedProxy<'a> {
    pub corpus: &'a Corpus,
    pub partition: Partition,
    pub task: &'a ReferenceTask,
    pub template: RewardModel,
    pub sample_size: usize,
    pub seed: u64,
}

impl<'a> TrainedProxy<'a> {
    pub fn new(
        corpus: &'a Corpus,
        actor: &ActorMemory,
        task: &'a ReferenceTask,
        template: RewardModel,
        sample_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if sample_size == 0 {
            return Err(Error::Config("proxy sample size must be >= 1".into()));
        }
        Ok(Self {
            corpus,
            partition: Partition::build(actor, corpus)?,
            task,
            template,
            sample_size,
            seed,
        })
    }
}

impl ProxyEvaluator for TrainedProxy<'_> {
    fn tag(&self) -> EvaluatorTag {
        EvaluatorTag::TrainedProxy
    }

    fn evaluate(&self, mixture: &MixtureConfig) -> Result<f64> {
        if mixture.proportions.len() != self.partition.members.len() {
            return Err(Error::Config(format!(
                "mixture {} has {} components for {} subcategories",
                mixture.config_id,
                mixture.proportions.len(),
                self.partition.members.len()
            )));
        }
        let weights: Vec<f64> = mixture
            .proportions
            .iter()
            .zip(&self.partition.members)
            .map(|(p, m)| if m.is_empty() { 0.0 } else { *p })
            .collect();
        let pick = WeightedIndex::new(&weights)
            .map_err(|e| Error::Data(format!("mixture {} selects no points: {e}", mixture.config_id)))?;
        let mut rng = stream(self.seed, "proxy", mixture.config_id as u64);
        let points = self.corpus.points();
        let sample: Vec<&DataPoint> = (0..self.sample_size)
            .map(|_| {
                let members = &self.partition.members[pick.sample(&mut rng)];
                &points[members[rng.random_range(0..members.len())]]
            })
            .collect();
        let fitted = newton_fit(&self.template, &sample, NewtonSettings::default())?;
        self.task.full_loss(&fitted)
    }
}

/// Evaluates every config (in parallel, results in config order).
pub fn evaluate_mixtures(configs: &[MixtureConfig], evaluator: &dyn ProxyEvaluator) -> Result<Vec<ProxyEvaluation>> {
    configs
        .par_iter()
        .map(|c| {
            let loss = evaluator.evaluate(c)?;
            if !loss.is_finite() {
                return Err(Error::Data(format!("proxy loss of config {} is {loss}", c.config_id)));
            }
            Ok(ProxyEvaluation {
                config_id: c.config_id,
                validation_loss: loss,
                evaluator: evaluator.tag(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub family: RegressorFamily,
    /// Ridge added to the normal equations (quadratic family only).
    pub ridge: f64,
    pub holdout_fraction: f64,
    pub split_seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            family: RegressorFamily::QuadraticRidge,
            ridge: 1e-9,
            holdout_fraction: 0.2,
            split_seed: 0,
        }
    }
}

fn solve_normal_equations(rows: &[Vec<f64>], y: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let n = rows.len();
    let q = rows[0].len();
    let x = DMatrix::from_fn(n, q, |i, j| rows[i][j]);
    let mut gram = x.transpose() * &x;
    for i in 0..q {
        gram[(i, i)] += ridge;
    }
    let rhs = x.transpose() * DVector::from_column_slice(y);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Fit("design matrix is rank deficient".into()))?;
    let diag: Vec<f64> = chol.l().diagonal().iter().map(|d| d * d).collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(*d), hi.max(*d)));
    if !(lo > 0.0) || hi / lo > 1e14 {
        return Err(Error::Fit(format!(
            "normal equations are ill-conditioned (pivot ratio {:.3e})",
            hi / lo
        )));
    }
    let coef = chol.solve(&rhs);
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::Fit("non-finite coefficients".into()));
    }
    Ok(coef.iter().copied().collect())
}

fn r_squared(pred: &[f64], y: &[f64]) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(y).map(|(p, v)| (p - v).powi(2)).sum();
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if ss_tot <= 1e-24 * scale {
        return if ss_res <= 1e-20 * scale { 1.0 } else { 0.0 };
    }
    1.0 - ss_res / ss_tot
}

/// Least-squares regression of loss on proportions. R^2 is measured on a
/// seeded held-out split; the returned coefficients use every evaluation.
pub fn fit_regressor(
    configs: &[MixtureConfig],
    evals: &[ProxyEvaluation],
    settings: FitSettings,
) -> Result<FittedRegressor> {
    let n_components = configs.first().map_or(0, |c| c.proportions.len());
    if evals.len() < n_components + 1 {
        return Err(Error::Fit(format!(
            "{} evaluations cannot fit {n_components} components",
            evals.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::with_capacity(evals.len());
    let mut y = Vec::with_capacity(evals.len());
    for e in evals {
        if !seen.insert(e.config_id) {
            return Err(Error::Fit(format!("duplicate config id {}", e.config_id)));
        }
        let c = configs
            .iter()
            .find(|c| c.config_id == e.config_id)
            .ok_or_else(|| Error::Fit(format!("evaluation of unknown config {}", e.config_id)))?;
        rows.push(design_row(settings.family, &c.proportions));
        y.push(e.validation_loss);
    }
    let ridge = match settings.family {
        RegressorFamily::Linear => 0.0,
        RegressorFamily::QuadraticRidge => settings.ridge,
    };
    let q = rows[0].len();

    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut stream(settings.split_seed, "holdout", 0));
    let n_test = ((rows.len() as f64) * settings.holdout_fraction).round() as usize;
    let (test, train) = order.split_at(n_test);
    let training_r2 = if n_test > 0 && train.len() >= q {
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
            (
                idx.iter().map(|&i| rows[i].clone()).collect(),
                idx.iter().map(|&i| y[i]).collect(),
            )
        };
        let (tr_x, tr_y) = pick(train);
        let (te_x, te_y) = pick(test);
        let c = solve_normal_equations(&tr_x, &tr_y, ridge)?;
        let pred: Vec<f64> = te_x.iter().map(|r| crate::linalg::dot(&c, r)).collect();
        r_squared(&pred, &te_y)
    } else {
        f64::NAN
    };
    let coefficients = solve_normal_equations(&rows, &y, ridge)?;
    let training_r2 = if training_r2.is_nan() {
        let pred: Vec<f64> = rows.iter().map(|r| crate::linalg::dot(&coefficients, r)).collect();
        r_squared(&pred, &y)
    } else {
        training_r2
    };
    Ok(FittedRegressor {
        family: settings.family,
        n_components,
        coefficients,
        training_r2,
    })
}

/// Predictions within a relative `1e-12` count as ties.
fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - 1e-12 * incumbent.abs().max(1.0)
}

/// Evaluates the regressor at the barycenter, every vertex and
/// `n_candidates` uniform simplex draws (in that order) and returns the
/// argmin, ties going to the earliest candidate.
/// Predictions within a relative `1e-12` of each other tie.
pub fn search_best_mixture(
    regressor: &FittedRegressor,
    attribute: &str,
    n_candidates: usize,
    seed: u64,
) -> Result<MixtureConfig> {
    let n = regressor.n_components;
    if n == 0 {
        return Err(Error::Fit("regressor has no components".into()));
    }
    let mut best = vec![1.0 / n as f64; n];
    let mut best_value = regressor.predict(&best);
    let mut consider = |p: Vec<f64>| {
        let v = regressor.predict(&p);
        if improves(v, best_value) {
            best_value = v;
            best = p;
        }
    };
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        consider(e);
    }
    // blocks of draws so the stream does not depend on thread count
    const BLOCK: usize = 4096;
    let blocks = n_candidates.div_ceil(BLOCK);
    let block_best: Vec<Option<(f64, Vec<f64>)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(derive_seed(seed, "search", 0), "search-block", b as u64);
            let count = BLOCK.min(n_candidates - b * BLOCK);
            let mut local: Option<(f64, Vec<f64>)> = None;
            for _ in 0..count {
                let mut p: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                let v = regressor.predict(&p);
                if local.as_ref().is_none_or(|(bv, _)| improves(v, *bv)) {
                    local = Some((v, p));
                }
            }
            local
        })
        .collect();
    for (v, p) in block_best.into_iter().flatten() {
        if improves(v, best_value) {
            best_value = v;
            best = p;
        }
    }
    Ok(MixtureConfig {
        attribute: attribute.to_string(),
        proportions: best,
        config_id: 0,
    })
}

/// Seeds an actor from a mixture: quality gets the ramp `w^j = j / n`,
/// other actors get `p_j / max p`. `stage_count` is reset.
pub fn initialize_actor_weights(best: &MixtureConfig, actor: &ActorMemory) -> Result<ActorMemory> {
    if best.attribute != actor.actor_id {
        return Err(Error::Config(format!(
            "mixture over `{}` cannot initialize actor `{}`",
            best.attribute, actor.actor_id
        )));
    }
    let n = actor.subcategories.len();
    let weights = if actor.attribute() == Attribute::Quality {
        (1..=n).map(|j| j as f64 / n as f64).collect()
    } else {
        if best.proportions.len() != n {
            return Err(Error::Config(format!(
                "mixture has {} components, actor `{}` has {n} subcategories",
                best.proportions.len(),
                actor.actor_id
            )));
        }
        let max = best.proportions.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::Config("mixture has no positive component".into()));
        }
        best.proportions.iter().map(|p| p / max).collect()
    };
    let mut out = actor.clone();
    out.weights = weights;
    out.stage_count = 0;
    out.validate()?;
    Ok(out)
}

/// Writes `config_id,<label>...,loss` rows.
pub fn write_evaluations_csv<W: Write>(
    out: W,
    labels: &[String],
    configs: &[MixtureConfig],
    evals: &[ProxyEvaluation],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["config_id".to_string()];
    header.extend(labels.iter().cloned());
    header.push("loss".into());
    w.write_record(&header)?;
    for e in evals {
        let c = configs
            .iter()
            .find(|c| c.config_id == e.config_id)
            .ok_or_else(|| Error::Data(format!("evaluation of unknown config {}", e.config_id)))?;
        let mut rec = vec![c.config_id.to_string()];
        rec.extend(c.proportions.iter().map(|p| p.to_string()));
        rec.push(e.validation_loss.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("evaluations csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelRegistry;
    use proptest::prelude::*;

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn mixtures_lie_on_the_simplex_and_are_seeded() {
        let natural = [0.5, 0.3, 0.15, 0.05];
        let a = sample_mixtures("domain", &natural, 512, 10.0, 3).unwrap();
        assert_eq!(a.len(), 512);
        assert_eq!(a[0].proportions, natural.to_vec());
        for c in &a {
            c.validate().unwrap();
        }
        assert_eq!(a, sample_mixtures("domain", &natural, 512, 10.0, 3).unwrap());
        assert_ne!(a, sample_mixtures("domain", &natural, 512, 10.0, 4).unwrap());
        assert!(sample_mixtures("domain", &[1.0], 10, 1.0, 0).is_err());
        assert!(sample_mixtures("domain", &natural, 4, 1.0, 0).is_err());
    }

    #[test]
    fn linear_surface_is_recovered_exactly() {
        let truth = [0.3, -1.2, 2.0, 0.7];
        let configs = sample_mixtures("domain", &uniform(4), 64, 4.0, 1).unwrap();
        let evals = evaluate_mixtures(&configs, &ClosedForm(|p: &[f64]| crate::linalg::dot(p, &truth))).unwrap();
        let fit = fit_regressor(
            &configs,
            &evals,
            FitSettings {
                family: RegressorFamily::Linear,
                ..FitSettings::default()
            },
        )
        .unwrap();
        for (c, t) in fit.coefficients.iter().zip(truth) {
            assert!((c - t).abs() < 1e-8);
        }
        assert!((fit.training_r2 - 1.0).abs() < 1e-10);
        let best = search_best_mixture(&fit, "domain", 1000, 0).unwrap();
        assert_eq!(best.proportions, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_surface_predicts_constant_and_keeps_barycenter() {
        let configs = sample_mixtures("topic", &uniform(3), 40, 3.0, 2).unwrap();
        let evals = evaluate_mixtures(&configs, &ClosedForm(|_: &[f64]| 1.5)).unwrap();
        for family in [RegressorFamily::Linear, RegressorFamily::QuadraticRidge] {
            let fit = fit_regressor(
                &configs,
                &evals,
                FitSettings {
                    family,
                    ..FitSettings::default()
                },
            )
            .unwrap();
            assert!((fit.predict(&[0.2, 0.3, 0.5]) - 1.5).abs() < 1e-8);
            let exact = FittedRegressor {
                coefficients: vec![1.5, 1.5, 1.5],
                family: RegressorFamily::Linear,
                n_components: 3,
                training_r2: 1.0,
            };
            let best = search_best_mixture(&exact, "topic", 500, 1).unwrap();
            assert_eq!(best.proportions, uniform(3));
        }
    }

    #[test]
    fn fit_errors() {
        let configs = sample_mixtures("topic", &uniform(3), 10, 3.0, 2).unwrap();
        let evals = evaluate_mixtures(&configs, &ClosedForm(|p: &[f64]| p[0])).unwrap();
        assert!(matches!(
            fit_regressor(&configs, &evals[..3], FitSettings::default()),
            Err(Error::Fit(_))
        ));
        let mut dup = evals.clone();
        dup[1].config_id = dup[0].config_id;
        assert!(matches!(
            fit_regressor(&configs, &dup, FitSettings::default()),
            Err(Error::Fit(_))
        ));
        let same = vec![configs[0].clone(); 6]
            .into_iter()
            .enumerate()
            .map(|(i, mut c)| {
                c.config_id = i;
                c
            })
            .collect::<Vec<_>>();
        let e = evaluate_mixtures(&same, &ClosedForm(|p: &[f64]| p[0])).unwrap();
        let lin = FitSettings {
            family: RegressorFamily::Linear,
            ..FitSettings::default()
        };
        assert!(matches!(fit_regressor(&same, &e, lin), Err(Error::Fit(_))));
    }

    #[test]
    fn actor_weights_from_mixture() {
        let reg = LabelRegistry::default();
        let domain = ActorMemory::for_registry("domain", &reg, 0.0, 0.3).unwrap();
        let uniform_mix = MixtureConfig {
            attribute: "domain".into(),
            proportions: uniform(7),
            config_id: 0,
        };
        let w = initialize_actor_weights(&uniform_mix, &domain).unwrap();
        assert!(w.weights.iter().all(|&v| v == 1.0));
        let mut quality = ActorMemory::for_registry("quality", &reg, 0.0, 0.3).unwrap();
        quality.stage_count = 7;
        let q_mix = MixtureConfig {
            attribute: "quality".into(),
            proportions: uniform(5),
            config_id: 0,
        };
        let q = initialize_actor_weights(&q_mix, &quality).unwrap();
        assert_eq!(q.weights, vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(q.stage_count, 0);
        assert_eq!(q.subcategories, quality.subcategories);
        assert!(matches!(
            initialize_actor_weights(&q_mix, &domain),
            Err(Error::Config(_))
        ));
        let again = initialize_actor_weights(&uniform_mix, &w).unwrap();
        assert_eq!(again, w);
    }

    #[test]
    fn evaluation_csv_layout() {
        let configs = sample_mixtures("x", &[0.5, 0.5], 3, 1.0, 0).unwrap();
        let evals = evaluate_mixtures(&configs, &ClosedForm(|p: &[f64]| p[0])).unwrap();
        let mut buf = Vec::new();
        write_evaluations_csv(&mut buf, &["a".into(), "b".into()], &configs, &evals).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("config_id,a,b,loss\n0,0.5,0.5,0.5\n"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn search_output_is_on_the_simplex(coef in proptest::collection::vec(-3.0f64..3.0, 10), seed in 0u64..50) {
            let reg = FittedRegressor {
                family: RegressorFamily::QuadraticRidge,
                n_components: 4,
                coefficients: coef,
                training_r2: 1.0,
            };
            let best = search_best_mixture(&reg, "a", 300, seed).unwrap();
            prop_assert!(best.validate().is_ok());
        }

        #[test]
        fn linear_surface_recovers_vertex(truth in proptest::collection::vec(-2.0f64..2.0, 5), seed in 0u64..1000) {
            let configs = sample_mixtures("d", &uniform(5), 40, 5.0, seed).unwrap();
            let evals = evaluate_mixtures(&configs, &ClosedForm(|p: &[f64]| crate::linalg::dot(p, &truth))).unwrap();
            let fit = fit_regressor(&configs, &evals, FitSettings { family: RegressorFamily::Linear, split_seed: seed, ..FitSettings::default() }).unwrap();
            let best = search_best_mixture(&fit, "d", 200, seed).unwrap();
            let argmin = (0..5).min_by(|&a, &b| truth[a].total_cmp(&truth[b])).unwrap();
            let argmax_p = (0..5).max_by(|&a, &b| best.proportions[a].total_cmp(&best.proportions[b])).unwrap();
            prop_assert_eq!(argmin, argmax_p);
        }
    }
}
