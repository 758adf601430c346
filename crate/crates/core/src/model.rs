//! Linear-model data, the check loss, order-statistic indexing and design
//! diagnostics shared by every estimator in the crate.
//!
//! The observable model is `y_i = beta0 + x_i' beta + z_i`, where the errors
//! `z_i` are i.i.d. with mean zero. Nothing here estimates anything; the types
//! only enforce shape and finiteness so the estimators can assume them.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{check_level, Error, Result};

/// Relative tolerance under which `n * alpha` is treated as an integer.
///
/// Levels such as 0.7 are not exact in binary, so `10.0 * 0.7` lands one ulp
/// above 7. Without snapping, `ceil` would select the 8th order statistic.
const INTEGER_SNAP: f64 = 1e-9;

/// Smallest/largest eigenvalue ratio at or below which `V_n` is singular.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// `n * alpha`, snapped to the nearest integer when within rounding of it.
pub fn scaled_level(n: usize, alpha: f64) -> f64 {
    let x = n as f64 * alpha;
    let r = x.round();
    if (x - r).abs() <= INTEGER_SNAP * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Whether `n * alpha` is an integer under the snapping convention.
pub fn is_integer_level(n: usize, alpha: f64) -> bool {
    let x = scaled_level(n, alpha);
    x == x.round()
}

/// Check loss `rho_alpha(u) = u * (alpha - 1{u < 0})`.
pub fn check_loss(u: f64, alpha: f64) -> Result<f64> {
    check_level(alpha, "alpha")?;
    if !u.is_finite() {
        return Err(Error::Domain(format!("residual must be finite, got {u}")));
    }
    Ok(rho(u, alpha))
}

/// Unchecked check loss for inner loops.
#[inline]
pub(crate) fn rho(u: f64, alpha: f64) -> f64 {
    if u < 0.0 {
        (alpha - 1.0) * u
    } else {
        alpha * u
    }
}

/// The rank selected by the `[n alpha]` bracket: `max(1, ceil(n alpha))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderStatisticIndex {
    pub alpha: f64,
    pub n: usize,
    /// 1-based rank in `1..=n`.
    pub index: usize,
}

impl OrderStatisticIndex {
    /// 0-based position into a sorted slice.
    pub fn position(&self) -> usize {
        self.index - 1
    }
}

pub fn order_index(alpha: f64, n: usize) -> Result<OrderStatisticIndex> {
    check_level(alpha, "alpha")?;
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let k = scaled_level(n, alpha).ceil() as usize;
    Ok(OrderStatisticIndex {
        alpha,
        n,
        index: k.clamp(1, n),
    })
}

/// Response vector and covariate matrix of the linear model.
///
/// Covariates are stored row-major; the intercept column is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
}

impl Dataset {
    /// Builds a dataset from a response and row-major covariates with `p` columns.
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if x.len() != n * p {
            return Err(Error::Dimension(format!(
                "covariate buffer has {} entries, expected n*p = {}*{}",
                x.len(),
                n,
                p
            )));
        }
        if n < p + 2 {
            return Err(Error::InvalidData(format!(
                "need n >= p + 2 observations, got n = {n}, p = {p}"
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("response {} is not finite", i + 1)));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "covariate ({}, {}) is not finite",
                k / p + 1,
                k % p + 1
            )));
        }
        Ok(Dataset { y, x, p })
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} covariate rows for {} responses",
                rows.len(),
                y.len()
            )));
        }
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Dimension(format!("row {} has a different width", i + 1)));
        }
        Dataset::new(y, rows.concat(), p)
    }

    /// Location-only model (`p = 0`).
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        Dataset::new(y, Vec::new(), 0)
    }

    /// Same design with a different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(y, self.x.clone(), self.p)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Row-major covariate buffer.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact panics on zero width
        (0..self.n()).map(move |i| self.row(i))
    }

    /// Column means `x_bar`.
    pub fn x_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let n = self.n() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Sample mean of the response.
    pub fn y_mean(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n() as f64
    }

    /// `y_i - x_i' b` for every observation.
    pub fn residuals(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.p);
        self.rows()
            .zip(&self.y)
            .map(|(r, y)| y - dot(r, b))
            .collect()
    }

    pub fn covariate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.p, &self.x)
    }

    pub fn diagnostics(&self) -> DesignDiagnostics {
        design_diagnostics(&self.covariate_matrix())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Regularity summaries of the covariate design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignDiagnostics {
    /// Centered scatter `sum (x_i - x_bar)(x_i - x_bar)'`.
    pub v_n: DMatrix<f64>,
    pub max_centered_norm: f64,
    /// `max_i (x_i - x_bar)' V_n^{-1} (x_i - x_bar)`; `None` when `V_n` is singular.
    pub max_leverage: Option<f64>,
    pub v_n_over_n_spectral_norm: f64,
    /// Advisory heuristic: leverage above 0.5 or a centered norm above `n^{1/4}`.
    pub x1_suspect: bool,
}

impl DesignDiagnostics {
    pub fn is_singular(&self) -> bool {
        self.v_n.nrows() > 0 && self.max_leverage.is_none()
    }
}

/// Diagnostics for an `n x p` covariate matrix (no intercept column).
///
/// Accepts any shape, including designs too small to form a [`Dataset`].
pub fn design_diagnostics(x: &DMatrix<f64>) -> DesignDiagnostics {
    let (n, p) = x.shape();
    if p == 0 || n == 0 {
        return DesignDiagnostics {
            v_n: DMatrix::zeros(p, p),
            max_centered_norm: 0.0,
            max_leverage: (p == 0).then_some(0.0),
            v_n_over_n_spectral_norm: 0.0,
            x1_suspect: false,
        };
    }
    let mean = x.row_mean();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let v = centered.transpose() * &centered;
    let v = (&v + v.transpose()) * 0.5;
    let max_norm = centered
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0_f64, f64::max);

    let eig = SymmetricEigen::new(v.clone());
    let largest = eig.eigenvalues.max();
    let smallest = eig.eigenvalues.min();
    let singular = largest <= 0.0 || smallest <= SINGULAR_RATIO * largest;

    let max_leverage = (!singular).then(|| {
        centered
            .row_iter()
            .map(|r| {
                eig.eigenvalues
                    .iter()
                    .zip(eig.eigenvectors.column_iter())
                    .map(|(lam, u)| {
                        let proj = r.transpose().dot(&u);
                        proj * proj / lam
                    })
                    .sum::<f64>()
            })
            .fold(0.0_f64, f64::max)
    });

    let x1_suspect = max_leverage.is_some_and(|h| h > 0.5) || max_norm > (n as f64).powf(0.25);
    DesignDiagnostics {
        v_n: v,
        max_centered_norm: max_norm,
        max_leverage,
        v_n_over_n_spectral_norm: largest.max(0.0) / n as f64,
        x1_suspect,
    }
}

/// Nondecreasing left-continuous step function on (0, 1) with one step per
/// stored value: `alpha -> values[order_index(alpha, n) - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepQuantileProcess {
    values: Vec<f64>,
}

impl StepQuantileProcess {
    /// Wraps already sorted values; rejects empty, non-finite or decreasing input.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidData("quantile process needs at least one value".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("quantile process values must be finite".into()));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidData("quantile process values must be nondecreasing".into()));
        }
        Ok(StepQuantileProcess { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Step values in order; `values()[k - 1]` holds on `((k - 1)/n, k/n]`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, alpha: f64) -> Result<f64> {
        let k = order_index(alpha, self.len())?;
        Ok(self.values[k.position()])
    }

    /// `(k/n, value_k)` for `k = 1..=n`: the right end of each step and its value.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.len() as f64;
        self.values
            .iter()
            .enumerate()
            .map(move |(k, v)| ((k + 1) as f64 / n, *v))
    }

    /// Applies a pointwise nondecreasing affine map `v -> scale * v + shift`, `scale >= 0`.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Self> {
        if !(scale >= 0.0) {
            return Err(Error::Domain(format!("scale must be nonnegative, got {scale}")));
        }
        StepQuantileProcess::from_sorted(self.values.iter().map(|v| scale * v + shift).collect())
    }
}

pub(crate) fn sort_floats(v: &mut [f64]) {
    v.sort_by(f64::total_cmp);
}

/// Empirical quantile function of `values` under the `ceil(n alpha)` convention.
pub fn empirical_quantile_process(values: &[f64]) -> Result<StepQuantileProcess> {
    if values.is_empty() {
        return Err(Error::InvalidData("empirical quantile of an empty sample".into()));
    }
    let mut v = values.to_vec();
    sort_floats(&mut v);
    StepQuantileProcess::from_sorted(v)
}
