use serde::{Deserialize, Serialize};

use crate::corpus::DataPoint;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// Squared error `0.5 (x.theta - y)^2`.
    LinearRegression,
    /// Log loss with targets in `[0, 1]`.
    LogisticRegression,
    /// Cross entropy over `classes` with integer targets; parameters are
    /// stored class-major (`classes * d_f`).
    SoftmaxClassifier { classes: usize },
}

impl ModelKind {
    pub fn parameter_count(&self, d_f: usize) -> usize {
        match self {
            ModelKind::SoftmaxClassifier { classes } => classes * d_f,
            _ => d_f,
        }
    }
}

/// A small convex model with ridge regularization.
///
/// The per-example *data* loss is `l(x; theta)`. Training adds
/// `lambda / 2 |theta|^2` to every example, so training gradients and
/// Hessians carry `lambda * theta` and `lambda * I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub kind: ModelKind,
    pub parameters: Vec<f64>,
    pub ridge: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl RewardModel {
    pub fn zeros(kind: ModelKind, d_f: usize, ridge: f64) -> Result<Self> {
        Self::new(kind, vec![0.0; kind.parameter_count(d_f)], ridge)
    }

    pub fn new(kind: ModelKind, parameters: Vec<f64>, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::Config(format!("ridge coefficient {ridge} must be >= 0")));
        }
        if let ModelKind::SoftmaxClassifier { classes } = kind {
            if classes < 2 || !parameters.len().is_multiple_of(classes) {
                return Err(Error::Config(format!(
                    "softmax with {classes} classes cannot hold {} parameters",
                    parameters.len()
                )));
            }
        }
        Ok(Self {
            kind,
            parameters,
            ridge,
        })
    }

    pub fn p(&self) -> usize {
        self.parameters.len()
    }

    /// Feature dimension the model expects.
    pub fn d_f(&self) -> usize {
        match self.kind {
            ModelKind::SoftmaxClassifier { classes } => self.p() / classes,
            _ => self.p(),
        }
    }

    fn check(&self, x: &DataPoint) -> Result<()> {
        if x.features.len() != self.d_f() {
            return Err(Error::Data(format!(
                "point {} has {} features, model expects {}",
                x.id,
                x.features.len(),
                self.d_f()
            )));
        }
        match self.kind {
            ModelKind::LogisticRegression if !(0.0..=1.0).contains(&x.target) => Err(Error::Data(format!(
                "point {} target {} is not a probability",
                x.id, x.target
            ))),
            ModelKind::SoftmaxClassifier { classes }
                if x.target.fract() != 0.0 || x.target < 0.0 || x.target >= classes as f64 =>
            {
                Err(Error::Data(format!(
                    "point {} target {} is not a class index below {classes}",
                    x.id, x.target
                )))
            }
            _ => Ok(()),
        }
    }

    fn softmax_probs(&self, x: &[f64], classes: usize) -> Vec<f64> {
        let d = x.len();
        let z: Vec<f64> = (0..classes)
            .map(|c| dot(&self.parameters[c * d..(c + 1) * d], x))
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Data loss of one example.
    pub fn loss(&self, x: &DataPoint) -> Result<f64> {
        self.check(x)?;
        let f = &x.features;
        Ok(match self.kind {
            ModelKind::LinearRegression => {
                let r = dot(&self.parameters, f) - x.target;
                0.5 * r * r
            }
            ModelKind::LogisticRegression => {
                let z = dot(&self.parameters, f);
                softplus(z) - x.target * z
            }
            ModelKind::SoftmaxClassifier { classes } => {
                let d = f.len();
                let z: Vec<f64> = (0..classes)
                    .map(|c| dot(&self.parameters[c * d..(c + 1) * d], f))
                    .collect();
                let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - z[x.target as usize]
            }
        })
    }

    /// Gradient of the data loss of one example.
    pub fn gradient(&self, x: &DataPoint) -> Result<Vec<f64>> {
        self.check(x)?;
        let f = &x.features;
        Ok(match self.kind {
            ModelKind::LinearRegression => {
                let r = dot(&self.parameters, f) - x.target;
                f.iter().map(|v| r * v).collect()
            }
            ModelKind::LogisticRegression => {
                let r = sigmoid(dot(&self.parameters, f)) - x.target;
                f.iter().map(|v| r * v).collect()
            }
            ModelKind::SoftmaxClassifier { classes } => {
                let probs = self.softmax_probs(f, classes);
                let y = x.target as usize;
                let mut g = Vec::with_capacity(self.p());
                for (c, pc) in probs.iter().enumerate() {
                    let r = pc - f64::from(u8::from(c == y));
                    g.extend(f.iter().map(|v| r * v));
                }
                g
            }
        })
    }

    /// Hessian of the data loss of one example applied to `v`.
    pub fn hvp(&self, x: &DataPoint, v: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let f = &x.features;
        Ok(match self.kind {
            ModelKind::LinearRegression => {
                let s = dot(f, v);
                f.iter().map(|a| s * a).collect()
            }
            ModelKind::LogisticRegression => {
                let s = sigmoid(dot(&self.parameters, f));
                let c = s * (1.0 - s) * dot(f, v);
                f.iter().map(|a| c * a).collect()
            }
            ModelKind::SoftmaxClassifier { classes } => {
                let d = f.len();
                let probs = self.softmax_probs(f, classes);
                let u: Vec<f64> = (0..classes).map(|c| dot(&v[c * d..(c + 1) * d], f)).collect();
                let mean_u = dot(&probs, &u);
                let mut out = Vec::with_capacity(self.p());
                for c in 0..classes {
                    let coef = probs[c] * (u[c] - mean_u);
                    out.extend(f.iter().map(|a| coef * a));
                }
                out
            }
        })
    }

    /// Training gradient of one example: data gradient plus `lambda * theta`.
    pub fn training_gradient(&self, x: &DataPoint) -> Result<Vec<f64>> {
        let mut g = self.gradient(x)?;
        axpy(self.ridge, &self.parameters, &mut g);
        Ok(g)
    }

    /// Mean data loss over `points`.
    pub fn mean_loss<'a, I>(&self, points: I) -> Result<f64>
    where
        I: IntoIterator<Item = &'a DataPoint>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for x in points {
            total += self.loss(x)?;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Task("mean loss over an empty set".into()));
        }
        Ok(total / n as f64)
    }

    /// Mean training objective: mean data loss plus `lambda / 2 |theta|^2`.
    pub fn training_objective(&self, points: &[&DataPoint]) -> Result<f64> {
        let data = self.mean_loss(points.iter().copied())?;
        Ok(data + 0.5 * self.ridge * dot(&self.parameters, &self.parameters))
    }

    /// Mean training gradient over `points`.
    pub fn mean_training_gradient(&self, points: &[&DataPoint]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Task("gradient over an empty batch".into()));
        }
        let mut g = vec![0.0; self.p()];
        for x in points {
            axpy(1.0, &self.gradient(x)?, &mut g);
        }
        let inv = 1.0 / points.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        axpy(self.ridge, &self.parameters, &mut g);
        Ok(g)
    }

    /// Mean training Hessian over `points` (data Hessians plus `lambda I`)
    /// applied to `v`.
    pub fn training_hvp(&self, points: &[&DataPoint], v: &[f64]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Task("Hessian over an empty training set".into()));
        }
        let mut out = vec![0.0; self.p()];
        for x in points {
            axpy(1.0, &self.hvp(x, v)?, &mut out);
        }
        let inv = 1.0 / points.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        axpy(self.ridge, v, &mut out);
        Ok(out)
    }

    /// One SGD step on the mean training gradient of `batch`.
    pub fn sgd_step(&mut self, batch: &[&DataPoint], lr: f64) -> Result<()> {
        let g = self.mean_training_gradient(batch)?;
        axpy(-lr, &g, &mut self.parameters);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(features: Vec<f64>, target: f64) -> DataPoint {
        DataPoint {
            id: 0,
            features,
            domain: "C4".into(),
            quality_score: 3.0,
            quality_interval: 4,
            topic: "Science".into(),
            token_count: 10,
            target,
            extra: Default::default(),
        }
    }

    #[test]
    fn linear_loss_and_gradient() {
        let m = RewardModel::new(ModelKind::LinearRegression, vec![1.0, 2.0], 0.0).unwrap();
        let x = point(vec![1.0, 1.0], 1.0);
        assert_eq!(m.loss(&x).unwrap(), 2.0);
        assert_eq!(m.gradient(&x).unwrap(), vec![2.0, 2.0]);
        assert_eq!(m.hvp(&x, &[1.0, 0.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn logistic_is_stable_for_large_margins() {
        let m = RewardModel::new(ModelKind::LogisticRegression, vec![800.0], 0.0).unwrap();
        assert!(m.loss(&point(vec![1.0], 1.0)).unwrap().abs() < 1e-12);
        assert!((m.loss(&point(vec![1.0], 0.0)).unwrap() - 800.0).abs() < 1e-9);
        assert!(m.loss(&point(vec![-1.0], 0.0)).unwrap().is_finite());
    }

    #[test]
    fn targets_are_validated() {
        let lg = RewardModel::zeros(ModelKind::LogisticRegression, 1, 0.0).unwrap();
        assert!(lg.loss(&point(vec![1.0], 2.0)).is_err());
        let sm = RewardModel::zeros(ModelKind::SoftmaxClassifier { classes: 3 }, 1, 0.0).unwrap();
        assert!(sm.loss(&point(vec![1.0], 3.0)).is_err());
        assert!(sm.loss(&point(vec![1.0], 0.5)).is_err());
        assert!((sm.loss(&point(vec![1.0], 2.0)).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(lg.loss(&point(vec![1.0, 2.0], 1.0)).is_err());
    }

    #[test]
    fn ridge_enters_training_quantities_only() {
        let m = RewardModel::new(ModelKind::LinearRegression, vec![1.0], 0.5).unwrap();
        let x = point(vec![0.0], 0.0);
        assert_eq!(m.gradient(&x).unwrap(), vec![0.0]);
        assert_eq!(m.training_gradient(&x).unwrap(), vec![0.5]);
        assert_eq!(m.training_hvp(&[&x], &[2.0]).unwrap(), vec![1.0]);
    }
}
