//! Least squares and LASSO with an unpenalised intercept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    /// The normal equations needed the ridge term.
    pub ridged: bool,
}

impl LinearFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coef.iter().map(|b| b.abs()).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("design has {rows} rows but response has {y}")]
    Dimension { rows: usize, y: usize },
    #[error("empty training set")]
    Empty,
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("coordinate descent did not converge in {sweeps} sweeps")]
    NotConverged { sweeps: usize, last: LinearFit },
}

fn check(x: &[Vec<f64>], y: &[f64]) -> Result<usize, RegressionError> {
    if x.len() != y.len() {
        return Err(RegressionError::Dimension { rows: x.len(), y: y.len() });
    }
    if y.is_empty() {
        return Err(RegressionError::Empty);
    }
    Ok(x.first().map_or(0, |r| r.len()))
}

/// Ordinary least squares via the normal equations; adds a small ridge
/// to the slope block when the Gram matrix is not positive definite.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<LinearFit, RegressionError> {
    let p = check(x, y)?;
    let n = y.len();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * DVector::from_column_slice(y);
    let solve = |g: DMatrix<f64>| g.cholesky().map(|c| c.solve(&rhs)).filter(|b| b.iter().all(|v| v.is_finite()));
    let (beta, ridged) = match solve(gram.clone()) {
        Some(b) if well_conditioned(&gram) => (b, false),
        _ => {
            let mut g = gram.clone();
            let scale = (1..=p).map(|j| g[(j, j)]).fold(1.0f64, f64::max);
            for j in 1..=p {
                g[(j, j)] += RIDGE_FALLBACK * scale;
            }
            log::warn!("singular normal equations; ridge {RIDGE_FALLBACK} applied");
            (solve(g).unwrap_or_else(|| DVector::zeros(p + 1)), true)
        }
    };
    Ok(LinearFit { intercept: beta[0], coef: beta.iter().skip(1).copied().collect(), ridged })
}

fn well_conditioned(gram: &DMatrix<f64>) -> bool {
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    max == 0.0 || min > max * 1e-12
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `RSS / (2n) + lambda * |coef|_1`.
pub fn lasso_objective(x: &[Vec<f64>], y: &[f64], fit: &LinearFit, lambda: f64) -> f64 {
    let n = y.len() as f64;
    let rss: f64 = x.iter().zip(y).map(|(r, yi)| (yi - fit.predict_row(r)).powi(2)).sum();
    rss / (2.0 * n) + lambda * fit.l1_norm()
}

/// Cyclic coordinate descent; stops when no coefficient (or the intercept)
/// moves by `tol` or more in a sweep.
pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], lambda: f64, tol: f64) -> Result<LinearFit, RegressionError> {
    fit_lasso_with(x, y, lambda, tol, 100_000)
}

pub fn fit_lasso_with(
    x: &[Vec<f64>],
    y: &[f64],
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<LinearFit, RegressionError> {
    let p = check(x, y)?;
    if !(tol > 0.0) {
        return Err(RegressionError::BadTolerance);
    }
    let n = y.len();
    let nf = n as f64;
    // Column-major copy for cache-friendly sweeps.
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.iter().map(|r| r[j]).collect()).collect();
    let sq: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut beta = vec![0.0; p];
    let mut b0 = y.iter().sum::<f64>() / nf;
    let mut resid: Vec<f64> = y.iter().map(|v| v - b0).collect();
    for _ in 0..max_sweeps {
        let mut max_change: f64 = 0.0;
        let shift = resid.iter().sum::<f64>() / nf;
        if shift != 0.0 {
            b0 += shift;
            resid.iter_mut().for_each(|r| *r -= shift);
            max_change = shift.abs();
        }
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let c = &cols[j];
            let rho = c.iter().zip(&resid).map(|(v, r)| v * r).sum::<f64>() / nf + sq[j] * beta[j];
            let new = soft_threshold(rho, lambda) / sq[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(c).for_each(|(r, v)| *r -= delta * v);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < tol {
            return Ok(LinearFit { intercept: b0, coef: beta, ridged: false });
        }
    }
    Err(RegressionError::NotConverged {
        sweeps: max_sweeps,
        last: LinearFit { intercept: b0, coef: beta, ridged: false },
    })
}

pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).map(|(p, v)| (p - v) * (p - v)).sum::<f64>() / y.len() as f64
}
