//! Two-step regression quantiles: R-estimated slopes at a fixed level
//! `lambda`, combined with an order statistic of the resulting residuals as
//! the intercept.
//!
//! The averaged version `B(alpha) = (y_i - (x_i - x_bar)'slopes)_{n:[n alpha]}`
//! is a nondecreasing step process with exactly `n` steps. After subtracting
//! `y_bar` it estimates the quantile function of the unobserved errors.

use crate::error::{check_level, Error, Result};
use crate::model::{dot, order_index, sort_floats, Dataset, StepQuantileProcess};
use crate::rank::{fit_r_estimator, REstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepQuantile {
    pub alpha: f64,
    pub lambda: f64,
    /// Order statistic of `y_i - x_i'slopes` at `order_index(alpha, n)`.
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl TwoStepQuantile {
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.intercept).chain(self.slopes.iter().copied()).collect()
    }
}

/// Slopes shared by every level of the two-step construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeEstimate {
    pub lambda: f64,
    pub slopes: Vec<f64>,
    /// `None` when `p = 0`.
    pub r_estimate: Option<REstimate>,
}

/// R-estimates the slopes (empty for `p = 0`).
pub fn estimate_slopes(ds: &Dataset, lambda: f64) -> Result<SlopeEstimate> {
    check_level(lambda, "lambda")?;
    if ds.p() == 0 {
        return Ok(SlopeEstimate {
            lambda,
            slopes: Vec::new(),
            r_estimate: None,
        });
    }
    let est = fit_r_estimator(ds, lambda)?;
    Ok(SlopeEstimate {
        lambda,
        slopes: est.beta_tilde.clone(),
        r_estimate: Some(est),
    })
}

pub fn two_step_quantile(ds: &Dataset, alpha: f64, lambda: f64) -> Result<TwoStepQuantile> {
    check_level(alpha, "alpha")?;
    let slopes = estimate_slopes(ds, lambda)?;
    two_step_from_slopes(ds, &slopes, alpha)
}

/// Two-step quantile at `alpha` reusing already estimated slopes.
pub fn two_step_from_slopes(ds: &Dataset, est: &SlopeEstimate, alpha: f64) -> Result<TwoStepQuantile> {
    check_level(alpha, "alpha")?;
    check_slopes(ds, &est.slopes)?;
    let mut resid = ds.residuals(&est.slopes);
    sort_floats(&mut resid);
    let k = order_index(alpha, ds.n())?;
    Ok(TwoStepQuantile {
        alpha,
        lambda: est.lambda,
        intercept: resid[k.position()],
        slopes: est.slopes.clone(),
    })
}

fn check_slopes(ds: &Dataset, slopes: &[f64]) -> Result<()> {
    if slopes.len() != ds.p() {
        return Err(Error::Dimension(format!(
            "{} slopes for a design with p = {}",
            slopes.len(),
            ds.p()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTwoStepProcess {
    /// Sorted `y_i - (x_i - x_bar)'slopes`.
    sorted_adjusted: Vec<f64>,
    pub lambda: f64,
    /// `y_bar`, the estimate of the nuisance `beta0 + x_bar'beta`.
    pub nuisance_estimate: f64,
    pub slopes: Vec<f64>,
    /// `x_bar'slopes`.
    pub slope_offset: f64,
    /// Sorted raw residuals `y_i - x_i'slopes`.
    sorted_residuals: Vec<f64>,
}

pub fn averaged_two_step_process(ds: &Dataset, lambda: f64) -> Result<AveragedTwoStepProcess> {
    let est = estimate_slopes(ds, lambda)?;
    averaged_from_slopes(ds, &est)
}

pub fn averaged_from_slopes(ds: &Dataset, est: &SlopeEstimate) -> Result<AveragedTwoStepProcess> {
    check_slopes(ds, &est.slopes)?;
    let slope_offset = dot(&ds.x_mean(), &est.slopes);
    let mut sorted_residuals = ds.residuals(&est.slopes);
    sort_floats(&mut sorted_residuals);
    // y_i - (x_i - x_bar)'b is formed as (y_i - x_i'b) + x_bar'b. Adding a
    // constant is monotone in floating point, so sorting commutes with it and
    // B(alpha) equals intercept + x_bar'slopes bit for bit.
    let sorted_adjusted = sorted_residuals.iter().map(|r| r + slope_offset).collect();
    Ok(AveragedTwoStepProcess {
        sorted_adjusted,
        lambda: est.lambda,
        nuisance_estimate: ds.y_mean(),
        slopes: est.slopes.clone(),
        slope_offset,
        sorted_residuals,
    })
}

impl AveragedTwoStepProcess {
    pub fn n(&self) -> usize {
        self.sorted_adjusted.len()
    }

    pub fn sorted_adjusted(&self) -> &[f64] {
        &self.sorted_adjusted
    }

    /// `B(alpha)`, the order statistic of the adjusted responses.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        let k = order_index(alpha, self.n())?;
        Ok(self.sorted_adjusted[k.position()])
    }

    /// The two-step intercept at `alpha`.
    pub fn intercept(&self, alpha: f64) -> Result<f64> {
        let k = order_index(alpha, self.n())?;
        Ok(self.sorted_residuals[k.position()])
    }

    /// `intercept(alpha) + x_bar'slopes`: the other side of the averaging identity.
    pub fn intercept_plus_offset(&self, alpha: f64) -> Result<f64> {
        Ok(self.intercept(alpha)? + self.slope_offset)
    }

    /// `B(.)` as a step process.
    pub fn process(&self) -> StepQuantileProcess {
        StepQuantileProcess::from_sorted(self.sorted_adjusted.clone())
            .expect("sorted finite values form a valid process")
    }

    /// `B(.) - nuisance`; subtracting a constant keeps the values sorted.
    pub fn centered_by(&self, nuisance: f64) -> Result<StepQuantileProcess> {
        if !nuisance.is_finite() {
            return Err(Error::Domain("nuisance must be finite".into()));
        }
        StepQuantileProcess::from_sorted(self.sorted_adjusted.iter().map(|v| v - nuisance).collect())
    }
}

/// `B(.) - y_bar`, the estimate of the error quantile function.
pub fn centered_process(proc: &AveragedTwoStepProcess) -> StepQuantileProcess {
    proc.centered_by(proc.nuisance_estimate)
        .expect("finite sample mean")
}
