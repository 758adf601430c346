//! Command-line surface: `fit`, `functional` and `simulate`.
//!
//! Settings come from an optional flat JSON config (keys are the [`RunConfig`]
//! field names) overridden by flags. Report bodies are a pure function of the
//! inputs; run metadata goes to a `<output>.meta.json` sidecar.

use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::functionals::{self, FunctionalEstimate, FunctionalKind};
use crate::io;
use crate::model::{empirical_quantile_process, Dataset};
use crate::rank::DEFAULT_LAMBDA;
use crate::simulation::{self, default_alphas, Design, ErrorDist, Metric, SimulationConfig};
use crate::two_step::{averaged_from_slopes, centered_process, estimate_slopes, two_step_from_slopes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Fit,
    Functional,
    Simulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Which simulation study `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    TwoStep,
    REstimator,
    Functional,
    /// Every applicable metric on shared replications.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub input_path: Option<PathBuf>,
    pub response_column: Option<String>,
    pub covariate_columns: Vec<String>,
    /// Empty means the default grid 0.05, 0.10, ..., 0.95.
    pub alpha: Vec<f64>,
    pub lambda: f64,
    pub functional: Option<FunctionalKind>,
    pub level: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub format: Format,
    pub seed: Option<u64>,
    pub study: Study,
    pub n_grid: Vec<usize>,
    pub p: usize,
    pub beta0: f64,
    pub beta: Vec<f64>,
    pub error_dist: ErrorDist,
    pub design: Design,
    pub replications: usize,
    pub coverage_c: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        RunConfig {
            command: None,
            input_path: None,
            response_column: None,
            covariate_columns: Vec::new(),
            alpha: Vec::new(),
            lambda: DEFAULT_LAMBDA,
            functional: None,
            level: None,
            output_path: None,
            format: Format::Json,
            seed: None,
            study: Study::All,
            n_grid: sim.n_grid,
            p: sim.p,
            beta0: sim.beta0,
            beta: sim.beta,
            error_dist: sim.error_dist,
            design: sim.design,
            replications: sim.replications,
            coverage_c: sim.coverage_c,
        }
    }
}

#[derive(Debug, Clone, Default, Parser)]
#[command(name = "qfunc", version, about = "Quantile functionals of regression errors via averaged two-step regression quantiles")]
pub struct CliArgs {
    /// fit | functional | simulate
    #[arg(long)]
    pub command: Option<String>,
    /// CSV file with a header row
    #[arg(long)]
    pub input: Option<String>,
    /// Response column name
    #[arg(long)]
    pub response: Option<String>,
    /// Comma-separated covariate column names
    #[arg(long)]
    pub covariates: Option<String>,
    /// Comma-separated levels in (0, 1)
    #[arg(long)]
    pub alpha: Option<String>,
    /// Hájek score level [default: 0.5]
    #[arg(long)]
    pub lambda: Option<String>,
    /// cvar | mean_excess | lorenz | gastwirth_j | staudte_r
    #[arg(long)]
    pub functional: Option<String>,
    /// Level or threshold of the functional
    #[arg(long)]
    pub level: Option<String>,
    /// Report path; stdout when absent
    #[arg(long)]
    pub output: Option<String>,
    /// json | csv
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Flat JSON file keyed by RunConfig field names
    #[arg(long)]
    pub config: Option<String>,
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| format!("'{t}' is not valid")))
        .collect()
}

fn parse_command(s: &str) -> std::result::Result<Command, String> {
    match s {
        "fit" => Ok(Command::Fit),
        "functional" => Ok(Command::Functional),
        "simulate" => Ok(Command::Simulate),
        _ => Err(format!("unknown command '{s}' (expected fit, functional, simulate)")),
    }
}

fn parse_format(s: &str) -> std::result::Result<Format, String> {
    match s {
        "json" => Ok(Format::Json),
        "csv" => Ok(Format::Csv),
        _ => Err(format!("unknown format '{s}' (expected json, csv)")),
    }
}

fn parse_study(s: &str) -> std::result::Result<Study, String> {
    match s {
        "two_step" => Ok(Study::TwoStep),
        "r_estimator" => Ok(Study::REstimator),
        "functional" => Ok(Study::Functional),
        "all" => Ok(Study::All),
        _ => Err(format!("unknown study '{s}' (expected two_step, r_estimator, functional, all)")),
    }
}

fn as_str(v: &Value) -> std::result::Result<&str, String> {
    v.as_str().ok_or_else(|| format!("expected a string, got {v}"))
}

fn as_f64(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| format!("{n} is not a real number")),
        Value::String(s) => s.trim().parse().map_err(|_| format!("'{s}' is not a number")),
        _ => Err(format!("expected a number, got {v}")),
    }
}

fn as_usize(v: &Value) -> std::result::Result<usize, String> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| format!("expected a nonnegative integer, got {v}"))
}

fn as_f64_list(v: &Value) -> std::result::Result<Vec<f64>, String> {
    match v {
        Value::Array(a) => a.iter().map(as_f64).collect(),
        Value::String(s) => parse_list(s),
        other => Ok(vec![as_f64(other)?]),
    }
}

fn as_string_list(v: &Value) -> std::result::Result<Vec<String>, String> {
    match v {
        Value::Array(a) => a.iter().map(|x| as_str(x).map(String::from)).collect(),
        Value::String(s) => Ok(s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()),
        other => Err(format!("expected a list of names, got {other}")),
    }
}

impl RunConfig {
    /// Applies one config-file entry, returning a message on failure.
    fn set_json(&mut self, key: &str, v: &Value) -> std::result::Result<(), String> {
        match key {
            "command" => self.command = Some(parse_command(as_str(v)?)?),
            "input_path" => self.input_path = Some(PathBuf::from(as_str(v)?)),
            "response_column" => self.response_column = Some(as_str(v)?.to_string()),
            "covariate_columns" => self.covariate_columns = as_string_list(v)?,
            "alpha" => self.alpha = as_f64_list(v)?,
            "lambda" => self.lambda = as_f64(v)?,
            "functional" => self.functional = Some(as_str(v)?.parse().map_err(|e: Error| e.to_string())?),
            "level" => self.level = Some(as_f64(v)?),
            "output_path" => self.output_path = Some(PathBuf::from(as_str(v)?)),
            "format" => self.format = parse_format(as_str(v)?)?,
            "seed" => self.seed = Some(v.as_u64().ok_or_else(|| format!("expected a 64-bit unsigned seed, got {v}"))?),
            "study" => self.study = parse_study(as_str(v)?)?,
            "n_grid" => match v {
                Value::Array(a) => self.n_grid = a.iter().map(as_usize).collect::<std::result::Result<_, _>>()?,
                other => return Err(format!("expected a list of sizes, got {other}")),
            },
            "p" => self.p = as_usize(v)?,
            "beta0" => self.beta0 = as_f64(v)?,
            "beta" => self.beta = as_f64_list(v)?,
            "error_dist" => self.error_dist = as_str(v)?.parse().map_err(|e: Error| e.to_string())?,
            "design" => self.design = as_str(v)?.parse().map_err(|e: Error| e.to_string())?,
            "replications" => self.replications = as_usize(v)?,
            "coverage_c" => self.coverage_c = as_f64(v)?,
            _ => return Err("unknown field".into()),
        }
        Ok(())
    }

    fn apply_json(&mut self, map: &Map<String, Value>, problems: &mut Vec<String>) {
        for (k, v) in map {
            if let Err(m) = self.set_json(k, v) {
                problems.push(format!("{k}: {m}"));
            }
        }
    }

    fn apply_flags(&mut self, a: &CliArgs, problems: &mut Vec<String>) {
        let mut note = |flag: &str, r: std::result::Result<(), String>| {
            if let Err(m) = r {
                problems.push(format!("--{flag}: {m}"));
            }
        };
        if let Some(s) = &a.command {
            note("command", parse_command(s).map(|c| self.command = Some(c)));
        }
        if let Some(s) = &a.input {
            self.input_path = Some(PathBuf::from(s));
        }
        if let Some(s) = &a.response {
            self.response_column = Some(s.clone());
        }
        if let Some(s) = &a.covariates {
            self.covariate_columns = s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
        }
        if let Some(s) = &a.alpha {
            note("alpha", parse_list(s).map(|v| self.alpha = v));
        }
        if let Some(s) = &a.lambda {
            note("lambda", s.trim().parse().map(|v| self.lambda = v).map_err(|_| format!("'{s}' is not a number")));
        }
        if let Some(s) = &a.functional {
            note("functional", s.parse().map(|k| self.functional = Some(k)).map_err(|e: Error| e.to_string()));
        }
        if let Some(s) = &a.level {
            note("level", s.trim().parse().map(|v| self.level = Some(v)).map_err(|_| format!("'{s}' is not a number")));
        }
        if let Some(s) = &a.output {
            self.output_path = Some(PathBuf::from(s));
        }
        if let Some(s) = &a.format {
            note("format", parse_format(s).map(|f| self.format = f));
        }
        if let Some(s) = &a.seed {
            note("seed", s.trim().parse().map(|v| self.seed = Some(v)).map_err(|_| format!("'{s}' is not a 64-bit unsigned integer")));
        }
    }

    /// Config file first, flags on top; every problem is reported at once.
    pub fn resolve(args: &CliArgs) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut problems = Vec::new();
        if let Some(path) = &args.config {
            match std::fs::read_to_string(path) {
                Err(e) => problems.push(format!("--config: cannot read {path}: {e}")),
                Ok(text) => match serde_json::from_str::<Value>(&text) {
                    Ok(Value::Object(map)) => cfg.apply_json(&map, &mut problems),
                    Ok(_) => problems.push("--config: expected a flat JSON object".into()),
                    Err(e) => problems.push(format!("--config: invalid JSON: {e}")),
                },
            }
        }
        cfg.apply_flags(args, &mut problems);
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn alphas(&self) -> Vec<f64> {
        if self.alpha.is_empty() {
            default_alphas()
        } else {
            self.alpha.clone()
        }
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let base = SimulationConfig::default();
        SimulationConfig {
            n_grid: self.n_grid.clone(),
            p: self.p,
            beta0: self.beta0,
            beta: self.beta.clone(),
            error_dist: self.error_dist,
            design: self.design,
            lambda: self.lambda,
            alphas: self.alphas(),
            replications: self.replications,
            seed: self.seed.unwrap_or(base.seed),
            coverage_c: self.coverage_c,
        }
    }

    /// The functional level: `level`, or a single `alpha`.
    fn functional_level(&self) -> Option<f64> {
        self.level.or(match self.alpha.as_slice() {
            [a] => Some(*a),
            _ => None,
        })
    }

    /// Semantic problems for the selected command.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            out.push(format!("lambda: must lie in (0, 1), got {}", self.lambda));
        }
        let Some(command) = self.command else {
            out.push("command: required (fit, functional, simulate)".into());
            return out;
        };
        let needs_functional = command == Command::Functional
            || (command == Command::Simulate && self.study == Study::Functional);
        if needs_functional {
            match self.functional {
                None => out.push("functional: required (cvar, mean_excess, lorenz, gastwirth_j, staudte_r)".into()),
                Some(FunctionalKind::Linear) => {
                    out.push("functional: 'linear' needs a weight function and is library-only".into())
                }
                Some(_) => {}
            }
            match self.functional_level() {
                None => out.push("level: required for a functional (or give exactly one alpha)".into()),
                Some(l) if !l.is_finite() => out.push(format!("level: must be finite, got {l}")),
                _ => {}
            }
        }
        match command {
            Command::Fit | Command::Functional => {
                if self.input_path.is_none() {
                    out.push("input_path: required".into());
                }
                if self.response_column.is_none() {
                    out.push("response_column: required".into());
                }
                if command == Command::Fit {
                    for a in &self.alpha {
                        if !(*a > 0.0 && *a < 1.0) {
                            out.push(format!("alpha: level {a} must lie in (0, 1)"));
                        }
                    }
                }
            }
            Command::Simulate => {
                out.extend(self.simulation_config().problems());
                if self.study == Study::REstimator && self.p == 0 {
                    out.push("p: the r_estimator study needs p >= 1".into());
                }
            }
        }
        out
    }
}

#[derive(Debug, Serialize)]
struct InterceptRow {
    alpha: f64,
    two_step_intercept: f64,
    /// `intercept + x_bar'slopes`, the averaged two-step quantile.
    averaged: f64,
}

#[derive(Debug, Serialize)]
struct ProcessRow {
    alpha_breakpoint: f64,
    value: f64,
    centered: f64,
}

#[derive(Debug, Serialize)]
struct DiagnosticsReport {
    max_centered_norm: f64,
    max_leverage: Option<f64>,
    v_n_over_n_spectral_norm: f64,
    singular: bool,
    x1_suspect: bool,
}

#[derive(Debug, Serialize)]
struct FitReport {
    n: usize,
    p: usize,
    lambda: f64,
    response: String,
    covariates: Vec<String>,
    slopes: Vec<f64>,
    dispersion: Option<f64>,
    nuisance_estimate: f64,
    slope_offset: f64,
    intercepts: Vec<InterceptRow>,
    diagnostics: DiagnosticsReport,
    process: Vec<ProcessRow>,
}

/// The functional report; field names are fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalReport {
    pub kind: FunctionalKind,
    pub level: f64,
    pub value: f64,
    pub n: usize,
    pub lambda: f64,
    pub process_source: String,
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.input_path.as_deref().ok_or_else(|| Error::Config(vec!["input_path: required".into()]))?;
    let response = cfg.response_column.as_deref().unwrap_or("y");
    io::read_dataset_path(path, response, &cfg.covariate_columns)
}

fn json_body<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Report body for `fit`.
pub fn run_fit(cfg: &RunConfig) -> Result<String> {
    let ds = load(cfg)?;
    let est = estimate_slopes(&ds, cfg.lambda)?;
    let proc = averaged_from_slopes(&ds, &est)?;
    if cfg.format == Format::Csv {
        return Ok(io::process_csv(&proc.process()));
    }
    let mut intercepts = Vec::new();
    for a in cfg.alphas() {
        let ts = two_step_from_slopes(&ds, &est, a)?;
        intercepts.push(InterceptRow { alpha: a, two_step_intercept: ts.intercept, averaged: proc.eval(a)? });
    }
    let d = ds.diagnostics();
    let centered = centered_process(&proc);
    let report = FitReport {
        n: ds.n(),
        p: ds.p(),
        lambda: cfg.lambda,
        response: cfg.response_column.clone().unwrap_or_default(),
        covariates: cfg.covariate_columns.clone(),
        slopes: est.slopes.clone(),
        dispersion: est.r_estimate.as_ref().map(|r| r.dispersion),
        nuisance_estimate: proc.nuisance_estimate,
        slope_offset: proc.slope_offset,
        intercepts,
        diagnostics: DiagnosticsReport {
            max_centered_norm: d.max_centered_norm,
            max_leverage: d.max_leverage,
            v_n_over_n_spectral_norm: d.v_n_over_n_spectral_norm,
            singular: d.is_singular(),
            x1_suspect: d.x1_suspect,
        },
        process: proc
            .process()
            .steps()
            .zip(centered.values())
            .map(|((a, v), c)| ProcessRow { alpha_breakpoint: a, value: v, centered: *c })
            .collect(),
    };
    Ok(json_body(&report))
}

/// Evaluates the functional on the centered two-step process, or on the
/// empirical quantile function of the response when there are no covariates.
pub fn functional_report(cfg: &RunConfig, ds: &Dataset) -> Result<FunctionalReport> {
    let kind = cfg.functional.ok_or_else(|| Error::Config(vec!["functional: required".into()]))?;
    let level = cfg
        .functional_level()
        .ok_or_else(|| Error::Config(vec!["level: required".into()]))?;
    let (proc, source) = if ds.p() == 0 {
        (empirical_quantile_process(ds.y())?, "empirical")
    } else {
        let est = estimate_slopes(ds, cfg.lambda)?;
        (centered_process(&averaged_from_slopes(ds, &est)?), "centered_two_step")
    };
    let FunctionalEstimate { kind, level, value, n } = functionals::evaluate(&proc, kind, level)?;
    Ok(FunctionalReport { kind, level, value, n, lambda: cfg.lambda, process_source: source.into() })
}

/// Report body for `functional`.
pub fn run_functional(cfg: &RunConfig) -> Result<String> {
    let r = functional_report(cfg, &load(cfg)?)?;
    Ok(match cfg.format {
        Format::Json => json_body(&r),
        Format::Csv => format!(
            "kind,level,value,n,lambda,process_source\n{},{},{},{},{},{}\n",
            r.kind, r.level, r.value, r.n, r.lambda, r.process_source
        ),
    })
}

/// Report body for `simulate`.
pub fn run_simulate(cfg: &RunConfig) -> Result<String> {
    let sim = cfg.simulation_config();
    let functional = match (cfg.functional, cfg.functional_level()) {
        (Some(k), Some(l)) => Some(Metric::Functional(k, l)),
        _ => None,
    };
    let metrics: Vec<Metric> = match cfg.study {
        Study::TwoStep => vec![Metric::TwoStepSup, Metric::TwoStepCenteredSup],
        Study::REstimator => vec![Metric::SlopeError],
        Study::Functional => functional.into_iter().collect(),
        Study::All => {
            let mut m = vec![Metric::TwoStepSup, Metric::TwoStepCenteredSup];
            if sim.p > 0 {
                m.push(Metric::SlopeError);
            }
            m.extend(functional);
            m
        }
    };
    let reports = simulation::run_study_with(&sim, &metrics, Default::default())?;
    Ok(match cfg.format {
        Format::Json => simulation::reports_to_json(&reports),
        Format::Csv => simulation::reports_to_csv(&reports),
    })
}

pub fn run(cfg: &RunConfig) -> Result<String> {
    match cfg.command {
        Some(Command::Fit) => run_fit(cfg),
        Some(Command::Functional) => run_functional(cfg),
        Some(Command::Simulate) => run_simulate(cfg),
        None => Err(Error::Config(vec!["command: required (fit, functional, simulate)".into()])),
    }
}

fn sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

fn write_output(cfg: &RunConfig, body: &str) -> Result<()> {
    let Some(out) = &cfg.output_path else {
        print!("{body}");
        return Ok(());
    };
    let io_err = |p: &Path, e: std::io::Error| Error::Io(format!("{}: {e}", p.display()));
    std::fs::write(out, body).map_err(|e| io_err(out, e))?;
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "tool": "qfunc",
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix_seconds": created,
        "threads": threads(),
        "parallel_feature": cfg!(feature = "parallel"),
        "config": cfg,
    });
    let side = sidecar_path(out);
    std::fs::write(&side, json_body(&meta)).map_err(|e| io_err(&side, e))
}

/// Single-line, machine-parsable error text.
pub fn error_line(e: &Error) -> String {
    format!("error[{}]: {}", e.code(), e.to_string().replace(['\n', '\r'], " "))
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match CliArgs::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("error[E_USAGE]: {first}");
            return 2;
        }
    };
    let outcome = RunConfig::resolve(&args).and_then(|cfg| {
        let body = run(&cfg)?;
        write_output(&cfg, &body)
    });
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            match e {
                Error::Config(_) | Error::Parse { .. } => 2,
                _ => 1,
            }
        }
    }
}
