//! Hájek rank scores, Jaeckel's rank dispersion and the R-estimator of the
//! slope vector.
//!
//! Scores are generated by the step function `phi_lambda(u) = 1{u >= lambda}`
//! (up to the additive constant `-(1 - lambda)`, which cancels after
//! centering). For rank `R` among `n` residuals the Hájek score is
//! `clamp(R - n lambda, 0, 1)`. Any other nondecreasing score generator can be
//! supplied through [`ScoreFunction`].
//!
//! The dispersion `sum_i (y_i - x_i'b)(a_i - a_bar)` depends on `b` only
//! through sorted residuals, so it equals `sum_k w_k r_(k)` with
//! `w_k = a(k) - a_bar`. That is a convex piecewise-linear function of `b`
//! with kinks where two residuals cross. The minimizer is found by exact line
//! searches: bisection on the one-sided slope, then a snap to the crossing
//! that produced the kink. Coordinate searches can stall on a ridge, so the
//! end point is checked against the exact subdifferential (residuals tied at
//! a score jump may swap weights); a small LP gives the steepest descent
//! direction, and a nonnegative slope certifies the minimum.

use nalgebra::{DMatrix, DVector};
use crate::error::{check_level, Error, Result};
use crate::model::{dot, scaled_level, sort_floats, Dataset};
use crate::simplex::StandardFormLp;

/// Default level of the score generator.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Directional derivatives above `-CERTIFICATE_TOL * (1 + dispersion)` pass.
pub const CERTIFICATE_TOL: f64 = 1e-6;

const CONVERGENCE_TOL: f64 = 1e-10;
/// Cap on the subdifferential vertices enumerated for the certificate.
const MAX_EXTREME_GRADIENTS: usize = 4096;

enum Certificate {
    Optimal,
    Descend(Vec<f64>),
    /// Too many tied residuals to enumerate the subdifferential.
    Unknown,
}

/// Calls `visit` with every distinct ordering of the multiset `slots`,
/// stopping early (and returning false) once `visit` returns false.
fn distinct_assignments(slots: &[f64], visit: &mut dyn FnMut(&[f64]) -> bool) -> bool {
    fn rec(pool: &mut Vec<(f64, usize)>, current: &mut Vec<f64>, total: usize, visit: &mut dyn FnMut(&[f64]) -> bool) -> bool {
        if current.len() == total {
            return visit(current);
        }
        for k in 0..pool.len() {
            if pool[k].1 == 0 {
                continue;
            }
            pool[k].1 -= 1;
            current.push(pool[k].0);
            let go_on = rec(pool, current, total, visit);
            current.pop();
            pool[k].1 += 1;
            if !go_on {
                return false;
            }
        }
        true
    }
    let mut pool: Vec<(f64, usize)> = Vec::new();
    for &w in slots {
        match pool.iter_mut().find(|(v, _)| (*v - w).abs() <= 1e-15) {
            Some(e) => e.1 += 1,
            None => pool.push((w, 1)),
        }
    }
    rec(&mut pool, &mut Vec::with_capacity(slots.len()), slots.len(), visit)
}

/// Scores indexed by rank. Must be nondecreasing in `rank` for the dispersion
/// to be convex.
pub trait ScoreFunction: Sync {
    /// Score of rank `rank` (1-based) among `n`.
    fn score(&self, rank: usize, n: usize) -> f64;
}

/// Hájek scores generated by `phi_lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HajekScores {
    lambda: f64,
}

impl HajekScores {
    pub fn new(lambda: f64) -> Result<Self> {
        check_level(lambda, "lambda")?;
        Ok(HajekScores { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl ScoreFunction for HajekScores {
    fn score(&self, rank: usize, n: usize) -> f64 {
        (rank as f64 - scaled_level(n, self.lambda)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankScoreVector {
    pub lambda: f64,
    /// Scores in observation order.
    pub scores: Vec<f64>,
    pub mean_score: f64,
}

/// Ranks (1-based) of `values`, ties broken by observation index.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0; values.len()];
    for (k, &i) in idx.iter().enumerate() {
        r[i] = k + 1;
    }
    r
}

pub fn hajek_scores(residuals: &[f64], lambda: f64) -> Result<RankScoreVector> {
    let gen = HajekScores::new(lambda)?;
    if residuals.is_empty() {
        return Err(Error::InvalidData("rank scores of an empty residual vector".into()));
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("residuals must be finite".into()));
    }
    let n = residuals.len();
    let scores: Vec<f64> = ranks(residuals).into_iter().map(|r| gen.score(r, n)).collect();
    let mean_score = scores.iter().sum::<f64>() / n as f64;
    Ok(RankScoreVector {
        lambda,
        scores,
        mean_score,
    })
}

fn require_slopes(ds: &Dataset, b: &[f64]) -> Result<()> {
    if ds.p() == 0 {
        return Err(Error::Dimension("rank dispersion needs at least one covariate".into()));
    }
    if b.len() != ds.p() {
        return Err(Error::Dimension(format!("{} slopes for p = {}", b.len(), ds.p())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("slope vector must be finite".into()));
    }
    Ok(())
}

/// `sum_i (y_i - x_i'b)(a_i(lambda, b) - a_bar)`.
///
/// Residuals are measured from their minimum before weighting; the centered
/// scores sum to zero, so the value is unchanged and constant residuals give
/// exactly zero.
pub fn jaeckel_dispersion(b: &[f64], ds: &Dataset, lambda: f64) -> Result<f64> {
    require_slopes(ds, b)?;
    let resid = ds.residuals(b);
    let a = hajek_scores(&resid, lambda)?;
    let floor = resid.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(resid
        .iter()
        .zip(&a.scores)
        .map(|(r, s)| (r - floor) * (s - a.mean_score))
        .sum())
}

/// Intercept-free form `sum_i (y_i - y_bar - (x_i - x_bar)'b) a_i(lambda, b)`.
pub fn jaeckel_dispersion_centered(b: &[f64], ds: &Dataset, lambda: f64) -> Result<f64> {
    require_slopes(ds, b)?;
    let resid = ds.residuals(b);
    let a = hajek_scores(&resid, lambda)?;
    let x_bar = ds.x_mean();
    let y_bar = ds.y_mean();
    Ok(ds
        .rows()
        .zip(ds.y())
        .zip(&a.scores)
        .map(|((r, y), s)| {
            let centered_fit: f64 = r.iter().zip(&x_bar).zip(b).map(|((x, m), b)| (x - m) * b).sum();
            (y - y_bar - centered_fit) * s
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct REstimate {
    pub lambda: f64,
    pub beta_tilde: Vec<f64>,
    /// Dispersion at `beta_tilde`, evaluated on the original response.
    pub dispersion: f64,
    /// Number of line searches performed.
    pub iterations: usize,
}

/// Minimizer of a rank dispersion under an arbitrary score generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionMinimum {
    pub beta: Vec<f64>,
    pub dispersion: f64,
    pub iterations: usize,
}

/// R-estimate of the slopes with Hájek scores at level `lambda`.
pub fn fit_r_estimator(ds: &Dataset, lambda: f64) -> Result<REstimate> {
    let gen = HajekScores::new(lambda)?;
    let m = minimize_dispersion(ds, &gen)?;
    Ok(REstimate {
        lambda,
        beta_tilde: m.beta,
        dispersion: m.dispersion,
        iterations: m.iterations,
    })
}

pub fn minimize_dispersion(ds: &Dataset, scores: &dyn ScoreFunction) -> Result<DispersionMinimum> {
    if ds.p() == 0 {
        return Err(Error::Dimension("R-estimation needs at least one covariate".into()));
    }
    let diag = ds.diagnostics();
    if diag.is_singular() {
        return Err(Error::Identifiability(
            "centered scatter matrix V_n is singular; slopes are not identifiable".into(),
        ));
    }
    let obj = Objective::new(ds, scores);
    let start = obj.least_squares_start(&diag.v_n)?;
    let (beta, iterations) = obj.minimize(start)?;
    let dispersion = obj.dispersion_original(&beta);
    Ok(DispersionMinimum {
        beta,
        dispersion,
        iterations,
    })
}

/// Dispersion restricted to a dataset, with the response shifted by one of
/// its own order statistics so the optimizer never sees the intercept.
struct Objective<'a> {
    ds: &'a Dataset,
    y: Vec<f64>,
    /// `w_k = a(k) - a_bar`, by rank.
    weights: Vec<f64>,
    tie_tol: f64,
}

impl<'a> Objective<'a> {
    fn new(ds: &'a Dataset, scores: &dyn ScoreFunction) -> Self {
        let n = ds.n();
        let raw: Vec<f64> = (1..=n).map(|k| scores.score(k, n)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let weights = raw.iter().map(|a| a - mean).collect();

        let mut sorted = ds.y().to_vec();
        sort_floats(&mut sorted);
        let anchor = sorted[(n - 1) / 2];
        let y: Vec<f64> = ds.y().iter().map(|v| v - anchor).collect();
        let scale = y.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        Objective {
            ds,
            y,
            weights,
            tie_tol: 1e-11 * scale,
        }
    }

    fn residuals(&self, b: &[f64]) -> Vec<f64> {
        self.ds
            .rows()
            .zip(&self.y)
            .map(|(r, y)| y - dot(r, b))
            .collect()
    }

    fn slopes(&self, d: &[f64]) -> Vec<f64> {
        self.ds.rows().map(|r| dot(r, d)).collect()
    }

    fn sorted_value(&self, mut v: Vec<f64>) -> f64 {
        sort_floats(&mut v);
        let floor = v[0];
        v.iter().zip(&self.weights).map(|(r, w)| (r - floor) * w).sum()
    }

    fn value(&self, b: &[f64]) -> f64 {
        self.sorted_value(self.residuals(b))
    }

    fn dispersion_original(&self, b: &[f64]) -> f64 {
        self.sorted_value(self.ds.residuals(b))
    }

    /// Value of the dispersion at `b + t d` given residuals `r` at `b` and slopes `s` of `d`.
    fn line_value(&self, r: &[f64], s: &[f64], t: f64) -> f64 {
        self.sorted_value(r.iter().zip(s).map(|(r, s)| r - t * s).collect())
    }

    /// Right derivative in `t` of `line_value` at `t`. Residuals within `tie_tol`
    /// of each other are treated as tied.
    fn right_slope(&self, r: &[f64], s: &[f64], t: f64, tie_tol: f64) -> f64 {
        let v: Vec<f64> = r.iter().zip(s).map(|(r, s)| r - t * s).collect();
        let mut idx: Vec<usize> = (0..v.len()).collect();
        // just past t, a larger slope means a smaller residual
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(s[b].total_cmp(&s[a])));
        if tie_tol > 0.0 {
            let mut start = 0;
            for k in 1..=idx.len() {
                if k == idx.len() || v[idx[k]] - v[idx[k - 1]] > tie_tol {
                    if k - start > 1 {
                        idx[start..k].sort_by(|&a, &b| s[b].total_cmp(&s[a]));
                    }
                    start = k;
                }
            }
        }
        -idx.iter().zip(&self.weights).map(|(&i, w)| w * s[i]).sum::<f64>()
    }

    fn least_squares_start(&self, v_n: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = self.ds.p();
        let x_bar = self.ds.x_mean();
        let y_bar = self.y.iter().sum::<f64>() / self.y.len() as f64;
        let mut rhs = DVector::zeros(p);
        for (r, y) in self.ds.rows().zip(&self.y) {
            for j in 0..p {
                rhs[j] += (r[j] - x_bar[j]) * (y - y_bar);
            }
        }
        let sol = v_n
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Identifiability("least-squares start failed: V_n singular".into()))?;
        Ok(sol.iter().copied().collect())
    }

    /// Exact minimization along `d` from `b`. Returns the new point and value
    /// when it improves on the current value.
    fn line_search(&self, b: &[f64], d: &[f64], current: f64) -> Option<(Vec<f64>, f64)> {
        let r = self.residuals(b);
        let mut s = self.slopes(d);
        let (lo_s, hi_s) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| (a.min(*v), c.max(*v)));
        if !(hi_s - lo_s > 1e-14 * (1.0 + hi_s.abs().max(lo_s.abs()))) {
            return None;
        }
        let w_abs: f64 = self.weights.iter().map(|w| w.abs()).sum();
        let slope_floor = 1e-13 * w_abs * (hi_s - lo_s);

        let mut sign = 1.0;
        if self.right_slope(&r, &s, 0.0, 0.0) >= -slope_floor {
            s.iter_mut().for_each(|v| *v = -*v);
            if self.right_slope(&r, &s, 0.0, 0.0) >= -slope_floor {
                return None;
            }
            sign = -1.0;
        }

        let (lo_r, hi_r) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), v| (a.min(*v), c.max(*v)));
        let mut lo = 0.0_f64;
        let mut hi = ((hi_r - lo_r) / (hi_s - lo_s)).max(f64::MIN_POSITIVE * 1e10);
        let mut doublings = 0;
        while self.right_slope(&r, &s, hi, 0.0) < 0.0 {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 1000 || !hi.is_finite() {
                return None;
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi.abs() {
                break;
            }
            if self.right_slope(&r, &s, mid, 0.0) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }

        // Snap to the residual crossing inside the final bracket.
        let v_lo: Vec<f64> = r.iter().zip(&s).map(|(r, s)| r - lo * s).collect();
        let mut order: Vec<usize> = (0..r.len()).collect();
        order.sort_by(|&a, &b| v_lo[a].total_cmp(&v_lo[b]).then(s[b].total_cmp(&s[a])));
        let slack = (hi - lo) + 1e-12 * hi.abs();
        let centre = 0.5 * (lo + hi);
        let mut candidates: Vec<f64> = order
            .windows(2)
            .filter_map(|w| {
                let (i, j) = (w[0], w[1]);
                let ds = s[i] - s[j];
                (ds != 0.0).then(|| (r[i] - r[j]) / ds)
            })
            .filter(|t| *t >= lo - slack && *t <= hi + slack)
            .collect();
        candidates.sort_by(|a, b| (a - centre).abs().total_cmp(&(b - centre).abs()));
        candidates.truncate(16);
        candidates.extend([hi, lo]);

        let (t, val) = candidates
            .into_iter()
            .map(|t| (t, self.line_value(&r, &s, t)))
            .fold((0.0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });

        if val < current && t != 0.0 {
            let nb = b.iter().zip(d).map(|(b, d)| b + sign * t * d).collect();
            Some((nb, val))
        } else {
            None
        }
    }

    /// Extreme points of the subdifferential at `b`. Residuals tied within
    /// `tie_tol` may take their group's slot weights in any order; only groups
    /// whose slots carry different weights contribute more than one point.
    /// `None` when the enumeration would exceed `MAX_EXTREME_GRADIENTS`.
    fn extreme_gradients(&self, b: &[f64]) -> Option<Vec<Vec<f64>>> {
        let p = b.len();
        let r = self.residuals(b);
        let mut idx: Vec<usize> = (0..r.len()).collect();
        idx.sort_by(|&i, &j| r[i].total_cmp(&r[j]));

        let mut fixed = vec![0.0; p];
        let mut choices: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut start = 0;
        for k in 1..=idx.len() {
            if k < idx.len() && r[idx[k]] - r[idx[k - 1]] <= self.tie_tol {
                continue;
            }
            let members = &idx[start..k];
            let slots = &self.weights[start..k];
            let (lo, hi) = slots.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), w| (a.min(*w), c.max(*w)));
            if hi - lo <= 1e-15 {
                for &i in members {
                    let row = self.ds.row(i);
                    for j in 0..p {
                        fixed[j] -= slots[0] * row[j];
                    }
                }
            } else {
                let mut options = Vec::new();
                if !distinct_assignments(slots, &mut |assign| {
                    let mut g = vec![0.0; p];
                    for (&i, w) in members.iter().zip(assign) {
                        let row = self.ds.row(i);
                        for j in 0..p {
                            g[j] -= w * row[j];
                        }
                    }
                    options.push(g);
                    options.len() <= MAX_EXTREME_GRADIENTS
                }) {
                    return None;
                }
                choices.push(options);
            }
            start = k;
        }
        let mut points = vec![fixed];
        for options in choices {
            if points.len() * options.len() > MAX_EXTREME_GRADIENTS {
                return None;
            }
            points = points
                .iter()
                .flat_map(|g| options.iter().map(move |o| g.iter().zip(o).map(|(a, b)| a + b).collect()))
                .collect();
        }
        Some(points)
    }

    /// Steepest descent direction in the unit max-norm ball and its
    /// directional derivative, `min_d max_g g'd`, solved as a small LP.
    fn steepest_descent(&self, b: &[f64]) -> Option<(Vec<f64>, f64)> {
        let grads = self.extreme_gradients(b)?;
        let p = b.len();
        let m = grads.len();
        // columns: d+ (p), d- (p), s+, s-, slack (m), u (p), v (p)
        let cols = 4 * p + 2 + m;
        let rows = m + 2 * p;
        let mut a = vec![0.0; rows * cols];
        let mut rhs = vec![0.0; rows];
        for (i, g) in grads.iter().enumerate() {
            let row = &mut a[i * cols..(i + 1) * cols];
            for j in 0..p {
                row[j] = g[j];
                row[p + j] = -g[j];
            }
            row[2 * p] = -1.0;
            row[2 * p + 1] = 1.0;
            row[2 * p + 2 + i] = 1.0;
        }
        for j in 0..p {
            let up = m + j;
            a[up * cols + j] = 1.0;
            a[up * cols + 2 * p + 2 + m + j] = 1.0;
            rhs[up] = 1.0;
            let down = m + p + j;
            a[down * cols + p + j] = 1.0;
            a[down * cols + 3 * p + 2 + m + j] = 1.0;
            rhs[down] = 1.0;
        }
        let mut c = vec![0.0; cols];
        c[2 * p] = 1.0;
        c[2 * p + 1] = -1.0;
        let basis: Vec<usize> = (0..m).map(|i| 2 * p + 2 + i).chain((0..2 * p).map(|j| 2 * p + 2 + m + j)).collect();
        let sol = StandardFormLp::new(a, rhs, c).ok()?.solve_from(basis).ok()?;
        let d: Vec<f64> = (0..p).map(|j| sol.x[j] - sol.x[p + j]).collect();
        Some((d, sol.objective))
    }

    /// Whether `b` is certified optimal, and otherwise a descent direction.
    fn certificate(&self, b: &[f64], value: f64) -> Certificate {
        let tol = CERTIFICATE_TOL * (1.0 + value.abs());
        match self.steepest_descent(b) {
            Some((_, slope)) if slope >= -tol => Certificate::Optimal,
            Some((d, _)) => Certificate::Descend(d),
            None => Certificate::Unknown,
        }
    }

    fn minimize(&self, start: Vec<f64>) -> Result<(Vec<f64>, usize)> {
        let p = start.len();
        let mut b = start;
        let mut value = self.value(&b);
        let mut searches = 0;
        let max_cycles = 200 * p + 100;

        for _ in 0..max_cycles {
            let cycle_start = b.clone();
            let value_start = value;
            for j in 0..p {
                let mut d = vec![0.0; p];
                d[j] = 1.0;
                searches += 1;
                if let Some((nb, nv)) = self.line_search(&b, &d, value) {
                    b = nb;
                    value = nv;
                }
            }
            if p > 1 {
                let d: Vec<f64> = b.iter().zip(&cycle_start).map(|(a, c)| a - c).collect();
                if d.iter().any(|v| *v != 0.0) {
                    searches += 1;
                    if let Some((nb, nv)) = self.line_search(&b, &d, value) {
                        b = nb;
                        value = nv;
                    }
                }
            }
            if value_start - value > CONVERGENCE_TOL * (1.0 + value.abs()) {
                continue;
            }
            match self.certificate(&b, value) {
                Certificate::Optimal => return Ok((b, searches)),
                Certificate::Descend(d) => {
                    searches += 1;
                    match self.line_search(&b, &d, value) {
                        Some((nb, nv)) => {
                            b = nb;
                            value = nv;
                        }
                        None => {
                            return Err(Error::SolverFailure {
                                message: "descent direction found but the line search made no progress".into(),
                                best: b,
                            })
                        }
                    }
                }
                Certificate::Unknown => {
                    return Err(Error::SolverFailure {
                        message: format!(
                            "too many tied residuals to certify the minimum (more than {MAX_EXTREME_GRADIENTS} subgradient vertices)"
                        ),
                        best: b,
                    })
                }
            }
        }
        Err(Error::SolverFailure {
            message: format!("no certified minimum after {max_cycles} cycles"),
            best: b,
        })
    }
}

/// One-sided directional derivative of the dispersion at `b` along `d`.
pub fn dispersion_directional_derivative(ds: &Dataset, lambda: f64, b: &[f64], d: &[f64]) -> Result<f64> {
    require_slopes(ds, b)?;
    if d.len() != b.len() {
        return Err(Error::Dimension("direction and slope vector differ in length".into()));
    }
    let gen = HajekScores::new(lambda)?;
    let obj = Objective::new(ds, &gen);
    let r = obj.residuals(b);
    let s = obj.slopes(d);
    Ok(obj.right_slope(&r, &s, 0.0, obj.tie_tol))
}
