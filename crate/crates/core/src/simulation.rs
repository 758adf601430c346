//! Monte Carlo harness: generates linear-model data with known errors, runs the
//! estimators and measures empirical convergence rates.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)` with stream
//! `(n << 32) | replicate`, so every `(n, replicate)` pair owns an independent
//! substream and results do not depend on execution order. Within a stream the
//! design is drawn first (row-major), then the errors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::functionals::{self, FunctionalKind};
use crate::model::{order_index, sort_floats, Dataset, StepQuantileProcess};
use crate::two_step::{averaged_two_step_process, centered_process};

/// Levels must lie in `[EPSILON, 1 - EPSILON]`.
pub const EPSILON: f64 = 0.05;

/// Mean-zero error laws with closed-form quantile functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ErrorDist {
    StandardNormal,
    /// `Exp(rate) - 1/rate`.
    ShiftedExponential { rate: f64 },
    /// Uniform on `(-width/2, width/2)`.
    UniformCentered { width: f64 },
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl ErrorDist {
    fn check(&self) -> Result<()> {
        match *self {
            ErrorDist::StandardNormal => Ok(()),
            ErrorDist::ShiftedExponential { rate } if rate.is_finite() && rate > 0.0 => Ok(()),
            ErrorDist::UniformCentered { width } if width.is_finite() && width > 0.0 => Ok(()),
            other => Err(Error::Domain(format!("{other}: parameter must be positive and finite"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorDist::StandardNormal => rng.sample(StandardNormal),
            ErrorDist::ShiftedExponential { rate } => {
                let e: f64 = rng.sample(Exp::new(rate).expect("rate validated"));
                e - 1.0 / rate
            }
            ErrorDist::UniformCentered { width } => width * (rng.random::<f64>() - 0.5),
        }
    }

    /// True quantile function `Q(u)`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            ErrorDist::StandardNormal => std_normal().inverse_cdf(u),
            ErrorDist::ShiftedExponential { rate } => -(-u).ln_1p() / rate - 1.0 / rate,
            ErrorDist::UniformCentered { width } => width * (u - 0.5),
        }
    }

    /// `(1 - alpha)^{-1} int_alpha^1 Q(u) du`.
    pub fn cvar(&self, alpha: f64) -> f64 {
        match *self {
            ErrorDist::StandardNormal => {
                let z = self.quantile(alpha);
                std_normal().pdf(z) / (1.0 - alpha)
            }
            // memoryless tail
            ErrorDist::ShiftedExponential { rate } => self.quantile(alpha) + 1.0 / rate,
            ErrorDist::UniformCentered { width } => 0.5 * (self.quantile(alpha) + 0.5 * width),
        }
    }

    /// `E(Z - gamma | Z >= gamma)`.
    pub fn mean_excess(&self, gamma: f64) -> Result<f64> {
        match *self {
            ErrorDist::StandardNormal => {
                let n = std_normal();
                let tail = n.sf(gamma);
                if tail <= 0.0 {
                    return Err(Error::NoExceedance(format!("P(Z >= {gamma}) underflows")));
                }
                Ok(n.pdf(gamma) / tail - gamma)
            }
            ErrorDist::ShiftedExponential { rate } => {
                let lo = -1.0 / rate;
                Ok(if gamma >= lo { 1.0 / rate } else { -gamma })
            }
            ErrorDist::UniformCentered { width } => {
                let h = 0.5 * width;
                if gamma >= h {
                    Err(Error::NoExceedance(format!("threshold {gamma} is at or above the support end {h}")))
                } else if gamma <= -h {
                    Ok(-gamma)
                } else {
                    Ok(0.5 * (h - gamma))
                }
            }
        }
    }

    /// Population value of a functional, where one exists for this law.
    pub fn truth(&self, kind: FunctionalKind, level: f64) -> Result<f64> {
        match kind {
            FunctionalKind::Cvar => {
                crate::error::check_level(level, "alpha")?;
                Ok(self.cvar(level))
            }
            FunctionalKind::MeanExcess => self.mean_excess(level),
            FunctionalKind::StaudteR => {
                crate::error::check_level(level, "alpha")?;
                Ok(self.quantile(level / 2.0) / self.quantile(1.0 - level / 2.0))
            }
            other => Err(Error::Domain(format!(
                "{other} needs a nonnegative variable; no truth for the mean-zero law {self}"
            ))),
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorDist::StandardNormal => write!(f, "standard_normal"),
            ErrorDist::ShiftedExponential { rate } => write!(f, "shifted_exponential({rate})"),
            ErrorDist::UniformCentered { width } => write!(f, "uniform_centered({width})"),
        }
    }
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let param = |default: f64| -> Result<f64> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Domain(format!("bad parameter '{a}' in error_dist '{s}'"))),
            }
        };
        let dist = match name.trim() {
            "standard_normal" if arg.is_none() => ErrorDist::StandardNormal,
            "shifted_exponential" => ErrorDist::ShiftedExponential { rate: param(1.0)? },
            "uniform_centered" => ErrorDist::UniformCentered { width: param(1.0)? },
            _ => {
                return Err(Error::Domain(format!(
                    "unknown error_dist '{s}' (expected standard_normal, shifted_exponential(rate), uniform_centered(width))"
                )))
            }
        };
        dist.check()?;
        Ok(dist)
    }
}

impl TryFrom<String> for ErrorDist {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ErrorDist> for String {
    fn from(d: ErrorDist) -> String {
        d.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// i.i.d. uniform on `[0, 1)^p`.
    IidUniformCube,
    /// `t_i = (i - 1)/(n - 1)`, column `j` (1-based) holds `t_i^j`.
    Equispaced,
    IidNormal,
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid_uniform_cube" => Ok(Design::IidUniformCube),
            "equispaced" => Ok(Design::Equispaced),
            "iid_normal" => Ok(Design::IidNormal),
            _ => Err(Error::Domain(format!(
                "unknown design '{s}' (expected iid_uniform_cube, equispaced, iid_normal)"
            ))),
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Design::IidUniformCube => "iid_uniform_cube",
            Design::Equispaced => "equispaced",
            Design::IidNormal => "iid_normal",
        })
    }
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_alphas() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_grid: Vec<usize>,
    pub p: usize,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub error_dist: ErrorDist,
    pub design: Design,
    pub lambda: f64,
    pub alphas: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    /// Coverage counts replications with `|error| < coverage_c / sqrt(n)`.
    pub coverage_c: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_grid: vec![100, 400, 1600],
            p: 1,
            beta0: 1.0,
            beta: vec![2.0],
            error_dist: ErrorDist::StandardNormal,
            design: Design::Equispaced,
            lambda: 0.5,
            alphas: default_alphas(),
            replications: 200,
            seed: 20_240_601,
            coverage_c: 3.0,
        }
    }
}

impl SimulationConfig {
    /// Every problem with the configuration, collected in one pass.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_grid.is_empty() {
            out.push("n_grid: must list at least one sample size".into());
        }
        for &n in &self.n_grid {
            if n < self.p + 2 {
                out.push(format!("n_grid: size {n} is below p + 2 = {}", self.p + 2));
            }
            if n as u64 > u32::MAX as u64 {
                out.push(format!("n_grid: size {n} exceeds 2^32 - 1"));
            }
        }
        if self.beta.len() != self.p {
            out.push(format!("beta: has {} entries but p = {}", self.beta.len(), self.p));
        }
        if !self.beta0.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            out.push("beta0/beta: coefficients must be finite".into());
        }
        if let Err(e) = self.error_dist.check() {
            out.push(format!("error_dist: {e}"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            out.push(format!("lambda: must lie in (0, 1), got {}", self.lambda));
        }
        if self.alphas.is_empty() {
            out.push("alphas: must list at least one level".into());
        }
        for &a in &self.alphas {
            if !(EPSILON - 1e-12..=1.0 - EPSILON + 1e-12).contains(&a) {
                out.push(format!("alphas: level {a} is outside [{EPSILON}, {}]", 1.0 - EPSILON));
            }
        }
        if self.replications == 0 {
            out.push("replications: must be at least 1".into());
        }
        if self.replications as u64 > u32::MAX as u64 {
            out.push("replications: must be below 2^32".into());
        }
        if !(self.coverage_c > 0.0 && self.coverage_c.is_finite()) {
            out.push(format!("coverage_c: must be positive, got {}", self.coverage_c));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Nuisance `beta0 + x_bar'beta` of a generated dataset.
    pub fn nuisance(&self, ds: &Dataset) -> f64 {
        self.beta0 + crate::model::dot(&ds.x_mean(), &self.beta)
    }
}

fn stream_rng(seed: u64, n: usize, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | replicate as u64);
    rng
}

/// The observable dataset and the hidden errors for one `(n, replicate)` pair.
pub fn generate(config: &SimulationConfig, n: usize, replicate: usize) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let p = config.p;
    if n < p + 2 {
        return Err(Error::Config(vec![format!("n = {n} is below p + 2 = {}", p + 2)]));
    }
    let mut rng = stream_rng(config.seed, n, replicate);
    let mut x = Vec::with_capacity(n * p);
    match config.design {
        Design::IidUniformCube => x.extend((0..n * p).map(|_| rng.random::<f64>())),
        Design::IidNormal => x.extend((0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal))),
        Design::Equispaced => {
            for i in 0..n {
                let t = i as f64 / (n - 1) as f64;
                x.extend((1..=p).map(|j| t.powi(j as i32)));
            }
        }
    }
    let errors: Vec<f64> = (0..n).map(|_| config.error_dist.sample(&mut rng)).collect();
    let y = (0..n)
        .map(|i| config.beta0 + crate::model::dot(&x[i * p..(i + 1) * p], &config.beta) + errors[i])
        .collect();
    Ok((Dataset::new(y, x, p)?, errors))
}

/// `sup_alpha |proc(alpha) - Z_{n:ceil(n alpha)}|` over the grid.
pub fn sup_deviation(proc: &StepQuantileProcess, errors: &[f64], alphas: &[f64]) -> Result<f64> {
    if proc.len() != errors.len() {
        return Err(Error::Dimension(format!(
            "process has {} steps but {} errors were given",
            proc.len(),
            errors.len()
        )));
    }
    let mut z = errors.to_vec();
    sort_floats(&mut z);
    let mut sup: f64 = 0.0;
    for &a in alphas {
        let k = order_index(a, z.len())?.position();
        sup = sup.max((proc.eval(a)? - z[k]).abs());
    }
    Ok(sup)
}

/// A quantity tracked per replication. Errors are `estimate - truth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    /// Sup deviation of `B(alpha) - beta0 - x_bar'beta` from the error order statistics.
    TwoStepSup,
    /// Same, with the nuisance replaced by `y_bar`.
    TwoStepCenteredSup,
    /// Euclidean error of the R-estimated slopes.
    SlopeError,
    /// A functional of the centered two-step process against the population value.
    Functional(FunctionalKind, f64),
}

impl Metric {
    pub fn name(&self) -> String {
        match self {
            Metric::TwoStepSup => "two_step_sup".into(),
            Metric::TwoStepCenteredSup => "two_step_centered_sup".into(),
            Metric::SlopeError => "r_estimator_error".into(),
            Metric::Functional(k, level) => format!("{k}@{level}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub metric: String,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// Root-mean-square error over successful replications, per size.
    pub rmse: Vec<f64>,
    pub mean_error: Vec<f64>,
    /// Least-squares slope of `ln rmse` on `ln n`; absent with fewer than two
    /// sizes or a zero rmse.
    pub fitted_slope: Option<f64>,
    pub coverage: Vec<f64>,
    pub coverage_c: f64,
    pub failures: Vec<usize>,
    pub truth: Option<f64>,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let s = sxy / sxx;
    s.is_finite().then_some(s)
}

fn replicate_metrics(config: &SimulationConfig, metrics: &[Metric], n: usize, rep: usize) -> Vec<Result<f64>> {
    let fitted = generate(config, n, rep).and_then(|(ds, z)| {
        let proc = averaged_two_step_process(&ds, config.lambda)?;
        Ok((ds, z, proc))
    });
    let (ds, z, proc) = match fitted {
        Ok(f) => f,
        Err(e) => return metrics.iter().map(|_| Err(e.clone())).collect(),
    };
    metrics
        .iter()
        .map(|m| match *m {
            Metric::TwoStepSup => {
                let shifted = proc.process().affine(1.0, -config.nuisance(&ds))?;
                sup_deviation(&shifted, &z, &config.alphas)
            }
            Metric::TwoStepCenteredSup => sup_deviation(&centered_process(&proc), &z, &config.alphas),
            Metric::SlopeError => Ok(proc
                .slopes
                .iter()
                .zip(&config.beta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()),
            Metric::Functional(kind, level) => {
                let est = functionals::evaluate(&centered_process(&proc), kind, level)?;
                Ok(est.value - config.error_dist.truth(kind, level)?)
            }
        })
        .collect()
}

/// Runs every metric on the same replications, so each dataset is generated
/// and fitted once.
pub fn run_study_with(config: &SimulationConfig, metrics: &[Metric], exec: Execution) -> Result<Vec<RateReport>> {
    config.validate()?;
    let mut truths = Vec::with_capacity(metrics.len());
    for m in metrics {
        match m {
            Metric::SlopeError if config.p == 0 => {
                return Err(Error::Config(vec!["p: the R-estimator study needs p >= 1".into()]))
            }
            Metric::Functional(kind, level) => truths.push(Some(config.error_dist.truth(*kind, *level)?)),
            _ => truths.push(None),
        }
    }
    let tasks: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let results = exec.map(&tasks, |&(n, r)| replicate_metrics(config, metrics, n, r));

    let reps = config.replications;
    let reports = metrics
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let mut report = RateReport {
                metric: m.name(),
                n_grid: config.n_grid.clone(),
                replications: reps,
                rmse: Vec::new(),
                mean_error: Vec::new(),
                fitted_slope: None,
                coverage: Vec::new(),
                coverage_c: config.coverage_c,
                failures: Vec::new(),
                truth: truths[mi],
            };
            for (gi, &n) in config.n_grid.iter().enumerate() {
                let values: Vec<f64> = results[gi * reps..(gi + 1) * reps]
                    .iter()
                    .filter_map(|r| r[mi].as_ref().ok().copied())
                    .collect();
                let k = values.len() as f64;
                let threshold = config.coverage_c / (n as f64).sqrt();
                report.failures.push(reps - values.len());
                report.rmse.push((values.iter().map(|v| v * v).sum::<f64>() / k).sqrt());
                report.mean_error.push(values.iter().sum::<f64>() / k);
                report
                    .coverage
                    .push(values.iter().filter(|v| v.abs() < threshold).count() as f64 / k);
            }
            if report.rmse.iter().all(|r| *r > 0.0 && r.is_finite()) {
                let ln_n: Vec<f64> = config.n_grid.iter().map(|&n| (n as f64).ln()).collect();
                let ln_r: Vec<f64> = report.rmse.iter().map(|r| r.ln()).collect();
                report.fitted_slope = ols_slope(&ln_n, &ln_r);
            }
            report
        })
        .collect();
    Ok(reports)
}

/// Two-step uniform closeness: the nuisance-oracle report, then the
/// `y_bar`-centered one.
pub fn rate_study_two_step(config: &SimulationConfig) -> Result<Vec<RateReport>> {
    rate_study_two_step_with(config, Execution::default())
}

pub fn rate_study_two_step_with(config: &SimulationConfig, exec: Execution) -> Result<Vec<RateReport>> {
    run_study_with(config, &[Metric::TwoStepSup, Metric::TwoStepCenteredSup], exec)
}

pub fn rate_study_r_estimator(config: &SimulationConfig) -> Result<RateReport> {
    rate_study_r_estimator_with(config, Execution::default())
}

pub fn rate_study_r_estimator_with(config: &SimulationConfig, exec: Execution) -> Result<RateReport> {
    Ok(run_study_with(config, &[Metric::SlopeError], exec)?.remove(0))
}

pub fn functional_consistency_study(config: &SimulationConfig, kind: FunctionalKind, level: f64) -> Result<RateReport> {
    functional_consistency_study_with(config, kind, level, Execution::default())
}

pub fn functional_consistency_study_with(
    config: &SimulationConfig,
    kind: FunctionalKind,
    level: f64,
    exec: Execution,
) -> Result<RateReport> {
    Ok(run_study_with(config, &[Metric::Functional(kind, level)], exec)?.remove(0))
}

/// One CSV row per `(metric, n)`.
pub fn reports_to_csv(reports: &[RateReport]) -> String {
    let mut out = String::from("metric,n,replications,rmse,mean_error,coverage,coverage_c,failures,fitted_slope,truth\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        for (i, n) in r.n_grid.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.metric,
                n,
                r.replications,
                r.rmse[i],
                r.mean_error[i],
                r.coverage[i],
                r.coverage_c,
                r.failures[i],
                opt(r.fitted_slope),
                opt(r.truth)
            ));
        }
    }
    out
}

pub fn reports_to_json(reports: &[RateReport]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub file: String,
    pub generator: String,
    pub seed: u64,
    pub n: usize,
    pub replicate: usize,
    pub p: usize,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub error_dist: ErrorDist,
    pub design: Design,
    /// Population values keyed `functional@level`.
    pub truths: Vec<(String, f64)>,
}

/// Writes `<stem>.csv` (columns `y, x1..xp`, then the hidden `z`) and
/// `<stem>.manifest.json` into `dir`.
pub fn export_fixture(
    config: &SimulationConfig,
    n: usize,
    replicate: usize,
    dir: &std::path::Path,
    stem: &str,
) -> Result<FixtureManifest> {
    let (ds, z) = generate(config, n, replicate)?;
    let file = format!("{stem}.csv");
    crate::io::write_dataset_csv(&dir.join(&file), &ds, Some(&z))?;
    let mut truths = Vec::new();
    for (kind, level) in [
        (FunctionalKind::Cvar, 0.9),
        (FunctionalKind::Cvar, 0.95),
        (FunctionalKind::MeanExcess, 0.0),
    ] {
        if let Ok(v) = config.error_dist.truth(kind, level) {
            truths.push((format!("{kind}@{level}"), v));
        }
    }
    let manifest = FixtureManifest {
        file,
        generator: "ChaCha8Rng::seed_from_u64(seed), stream (n << 32) | replicate".into(),
        seed: config.seed,
        n,
        replicate,
        p: config.p,
        beta0: config.beta0,
        beta: config.beta.clone(),
        error_dist: config.error_dist,
        design: config.design,
        truths,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join(format!("{stem}.manifest.json")), json)?;
    Ok(manifest)
}
