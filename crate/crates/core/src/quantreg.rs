//! Ordinary regression quantiles by exact linear programming, and the
//! averaged regression quantile `x_bar*' beta_hat(alpha)`.
//!
//! The check-loss minimization is written in equality form with every free
//! coefficient split into positive and negative parts and every residual split
//! into `u_i - v_i`:
//!
//! ```text
//! min  sum_i alpha u_i + (1 - alpha) v_i
//! s.t. b0+ - b0- + x_i'(b+ - b-) + u_i - v_i = y_i,   all parts >= 0
//! ```
//!
//! Starting from the slack basis (`u_i` when `y_i >= 0`, else `v_i`) the
//! problem is feasible immediately, so no phase one is needed.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_level, Error, Result};
use crate::model::{dot, rho, Dataset, SINGULAR_RATIO};
use crate::simplex::StandardFormLp;

/// Residuals at most this large (relative to the response scale) count as zero.
const ZERO_RESIDUAL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub alpha: f64,
    pub beta0_hat: f64,
    pub beta_hat: Vec<f64>,
    /// `sum_i rho_alpha(y_i - beta0_hat - x_i' beta_hat)`, recomputed from the residuals.
    pub objective: f64,
    /// Observations interpolated by the fit.
    pub n_active: usize,
}

impl QuantileFit {
    /// `(beta0_hat, beta_hat...)` as one vector.
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.beta0_hat).chain(self.beta_hat.iter().copied()).collect()
    }
}

/// Errors unless the augmented design `(1, X)` has full column rank.
pub fn check_full_rank(ds: &Dataset) -> Result<()> {
    let n = ds.n();
    let k = ds.p() + 1;
    let mut aug = DMatrix::zeros(n, k);
    for (i, r) in ds.rows().enumerate() {
        aug[(i, 0)] = 1.0;
        for (j, v) in r.iter().enumerate() {
            aug[(i, j + 1)] = *v;
        }
    }
    let gram = aug.transpose() * &aug / n as f64;
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 || lo <= SINGULAR_RATIO * hi {
        return Err(Error::Identifiability(format!(
            "augmented design (1, X) is rank deficient (eigenvalue ratio {:.3e})",
            if hi > 0.0 { lo / hi } else { 0.0 }
        )));
    }
    Ok(())
}

/// Fits the `alpha`-regression quantile.
pub fn fit_regression_quantile(ds: &Dataset, alpha: f64) -> Result<QuantileFit> {
    check_level(alpha, "alpha")?;
    check_full_rank(ds)?;

    let n = ds.n();
    let k = ds.p() + 1;
    let cols = 2 * k + 2 * n;
    let mut a = vec![0.0; n * cols];
    let mut c = vec![0.0; cols];
    for i in 0..n {
        let row = &mut a[i * cols..(i + 1) * cols];
        row[0] = 1.0;
        row[k] = -1.0;
        for (j, v) in ds.row(i).iter().enumerate() {
            row[j + 1] = *v;
            row[k + j + 1] = -*v;
        }
        row[2 * k + i] = 1.0;
        row[2 * k + n + i] = -1.0;
        c[2 * k + i] = alpha;
        c[2 * k + n + i] = 1.0 - alpha;
    }
    let basis: Vec<usize> = ds
        .y()
        .iter()
        .enumerate()
        .map(|(i, &y)| if y >= 0.0 { 2 * k + i } else { 2 * k + n + i })
        .collect();

    let lp = StandardFormLp::new(a, ds.y().to_vec(), c)?;
    let sol = lp.solve_from(basis)?;
    let coef: Vec<f64> = (0..k).map(|j| sol.x[j] - sol.x[k + j]).collect();
    let lp_fit = assemble(ds, alpha, coef[0], coef[1..].to_vec());

    // Re-solve the vertex from its interpolated observations; the tableau
    // accumulates rounding that the square system does not.
    let mut in_basis = vec![false; n];
    for &j in &sol.basis {
        if j >= 2 * k {
            in_basis[(j - 2 * k) % n] = true;
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| !in_basis[i]).collect();
    if active.len() == k {
        if let Some(polished) = interpolate(ds, &active) {
            let fit = assemble(ds, alpha, polished[0], polished[1..].to_vec());
            if fit.objective <= lp_fit.objective + 1e-9 * (1.0 + lp_fit.objective) {
                return Ok(fit);
            }
        }
    }
    Ok(lp_fit)
}

/// Coefficients of the fit passing exactly through the observations in `rows`.
fn interpolate(ds: &Dataset, rows: &[usize]) -> Option<Vec<f64>> {
    let k = rows.len();
    if k == 1 {
        return Some(vec![ds.y()[rows[0]]]);
    }
    let mut m = DMatrix::zeros(k, k);
    for (a, &i) in rows.iter().enumerate() {
        m[(a, 0)] = 1.0;
        for (j, v) in ds.row(i).iter().enumerate() {
            m[(a, j + 1)] = *v;
        }
    }
    let rhs = nalgebra::DVector::from_iterator(k, rows.iter().map(|&i| ds.y()[i]));
    let sol = m.lu().solve(&rhs)?;
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

fn assemble(ds: &Dataset, alpha: f64, beta0_hat: f64, beta_hat: Vec<f64>) -> QuantileFit {
    let scale = ds.y().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut objective = 0.0;
    let mut n_active = 0;
    for (r, y) in ds.rows().zip(ds.y()) {
        let e = y - beta0_hat - dot(r, &beta_hat);
        objective += rho(e, alpha);
        if e.abs() <= ZERO_RESIDUAL * scale {
            n_active += 1;
        }
    }
    QuantileFit {
        alpha,
        beta0_hat,
        beta_hat,
        objective,
        n_active,
    }
}

/// Check-loss objective of an arbitrary coefficient vector `(b0, b...)`.
pub fn quantile_objective(ds: &Dataset, alpha: f64, coefficients: &[f64]) -> Result<f64> {
    check_level(alpha, "alpha")?;
    if coefficients.len() != ds.p() + 1 {
        return Err(Error::Dimension(format!(
            "{} coefficients for p = {}",
            coefficients.len(),
            ds.p()
        )));
    }
    Ok(ds
        .rows()
        .zip(ds.y())
        .map(|(r, y)| rho(y - coefficients[0] - dot(r, &coefficients[1..]), alpha))
        .sum())
}

/// One-sided directional derivative of the check-loss objective at
/// `coefficients` along `direction` (both including the intercept).
pub fn quantile_directional_derivative(
    ds: &Dataset,
    alpha: f64,
    coefficients: &[f64],
    direction: &[f64],
) -> f64 {
    let scale = ds.y().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    ds.rows()
        .zip(ds.y())
        .map(|(r, y)| {
            let e = y - coefficients[0] - dot(r, &coefficients[1..]);
            // residual moves by -g per unit step
            let g = direction[0] + dot(r, &direction[1..]);
            if e.abs() <= ZERO_RESIDUAL * scale {
                rho(-g, alpha)
            } else if e > 0.0 {
                -alpha * g
            } else {
                (1.0 - alpha) * g
            }
        })
        .sum()
}

/// Averaged regression quantile `beta0_hat + x_bar' beta_hat`.
pub fn averaged_regression_quantile(fit: &QuantileFit, ds: &Dataset) -> Result<f64> {
    if fit.beta_hat.len() != ds.p() {
        return Err(Error::Dimension(format!(
            "fit has {} slopes but dataset has p = {}",
            fit.beta_hat.len(),
            ds.p()
        )));
    }
    Ok(fit.beta0_hat + dot(&ds.x_mean(), &fit.beta_hat))
}
