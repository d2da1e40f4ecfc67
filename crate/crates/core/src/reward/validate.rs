//! Oracles for checking influence values: Newton refits, leave-one-out
//! reference-loss deltas and central finite differences.

use crate::corpus::DataPoint;
use crate::error::{Error, Result};
use crate::linalg::{axpy, conjugate_gradient, dot, norm, CgSettings};

use super::{ReferenceTask, RewardModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Stop once the training-gradient norm falls below this.
    pub gradient_tolerance: f64,
    pub max_iters: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-11,
            max_iters: 100,
        }
    }
}

/// Minimizes the mean training objective over `points` by damped Newton
/// steps, starting from `model`'s parameters.
pub fn newton_fit(model: &RewardModel, points: &[&DataPoint], settings: NewtonSettings) -> Result<RewardModel> {
    let mut m = model.clone();
    let p = m.p();
    for _ in 0..settings.max_iters {
        let g = m.mean_training_gradient(points)?;
        if norm(&g) <= settings.gradient_tolerance {
            return Ok(m);
        }
        let step = conjugate_gradient(
            |v| m.training_hvp(points, v).unwrap_or_else(|_| vec![f64::NAN; p]),
            &g,
            CgSettings {
                tolerance: 1e-12,
                max_iters: 20 * p,
            },
        )?
        .x;
        let f0 = m.training_objective(points)?;
        let slope = dot(&g, &step);
        let mut t = 1.0;
        loop {
            let mut trial = m.clone();
            axpy(-t, &step, &mut trial.parameters);
            let f1 = trial.training_objective(points)?;
            if f1 <= f0 - 1e-4 * t * slope || t < 1e-10 {
                m = trial;
                break;
            }
            t *= 0.5;
        }
    }
    let g = m.mean_training_gradient(points)?;
    if norm(&g) <= settings.gradient_tolerance * 1e3 {
        Ok(m)
    } else {
        Err(Error::Solver {
            iterations: settings.max_iters,
            residual: norm(&g),
        })
    }
}

/// For each training point, the increase of the reference loss when the
/// point is removed and the model refit: `L_ref(without x) - L_ref(with x)`.
/// `model` should already minimize the objective over `points`.
pub fn leave_one_out_deltas(
    model: &RewardModel,
    points: &[&DataPoint],
    task: &ReferenceTask,
    settings: NewtonSettings,
) -> Result<Vec<f64>> {
    let base = task.loss(model)?;
    (0..points.len())
        .map(|i| {
            let rest: Vec<&DataPoint> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, x)| *x)
                .collect();
            let refit = newton_fit(model, &rest, settings)?;
            Ok(task.loss(&refit)? - base)
        })
        .collect()
}

/// Central finite-difference gradient of `f` at `theta`.
pub fn finite_difference_gradient<F>(f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let up = f(&x);
            x[i] = theta[i] - h;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error `|analytic - numeric| / |numeric|` between the data-loss
/// gradient of `x` and central finite differences.
pub fn gradient_check(model: &RewardModel, x: &DataPoint, h: f64) -> Result<f64> {
    let analytic = model.gradient(x)?;
    let numeric = finite_difference_gradient(
        |theta| {
            let mut probe = model.clone();
            probe.parameters.copy_from_slice(theta);
            probe.loss(x).unwrap_or(f64::NAN)
        },
        &model.parameters,
        h,
    );
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / norm(&numeric).max(1e-8))
}
