//! Small dense vector helpers and a matrix-free conjugate-gradient solver.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    /// Stop once `|r| <= tolerance * |b|`.
    pub tolerance: f64,
    pub max_iters: usize,
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A`, given only the
/// product `v -> A v`.
///
/// Non-positive curvature `p^T A p <= 0` along a search direction means `A`
/// is not positive definite and is reported as [`Error::Definiteness`].
pub fn conjugate_gradient<F>(apply: F, b: &[f64], settings: CgSettings) -> Result<CgSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }

    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs_old = dot(&r, &r);
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if rs_old.sqrt() <= settings.tolerance * b_norm {
            converged = true;
            break;
        }
        if iterations == settings.max_iters {
            break;
        }
        let ap = apply(&p);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 || !curvature.is_finite() {
            return Err(Error::Definiteness { curvature });
        }
        let alpha = rs_old / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs_old;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs_old = rs_new;
        iterations += 1;
    }

    let relative_residual = rs_old.sqrt() / b_norm;
    if !converged {
        return Err(Error::Solver {
            iterations,
            residual: relative_residual,
        });
    }
    Ok(CgSolution {
        x,
        iterations,
        relative_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(m: &[Vec<f64>]) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |v| m.iter().map(|row| dot(row, v)).collect()
    }

    #[test]
    fn solves_spd_system() {
        let a = vec![vec![4.0, 1.0, 0.0], vec![1.0, 3.0, 0.5], vec![0.0, 0.5, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let sol = conjugate_gradient(
            dense(&a),
            &b,
            CgSettings {
                tolerance: 1e-12,
                max_iters: 30,
            },
        )
        .unwrap();
        let ax = dense(&a)(&sol.x);
        for (l, r) in ax.iter().zip(&b) {
            assert!((l - r).abs() < 1e-10);
        }
        assert!(sol.iterations <= 3);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let sol = conjugate_gradient(
            dense(&a),
            &[0.0, 0.0],
            CgSettings {
                tolerance: 1e-8,
                max_iters: 10,
            },
        )
        .unwrap();
        assert_eq!(sol.x, vec![0.0, 0.0]);
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
        let err = conjugate_gradient(
            dense(&a),
            &[0.0, 1.0],
            CgSettings {
                tolerance: 1e-8,
                max_iters: 10,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Definiteness { .. }));
    }

    #[test]
    fn iteration_cap_is_reported_with_residual() {
        let a: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..6).map(|j| if i == j { 10f64.powi(i) } else { 0.0 }).collect())
            .collect();
        let err = conjugate_gradient(
            dense(&a),
            &[1.0; 6],
            CgSettings {
                tolerance: 1e-12,
                max_iters: 2,
            },
        )
        .unwrap_err();
        match err {
            Error::Solver { iterations, residual } => {
                assert_eq!(iterations, 2);
                assert!(residual > 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
