//! Functionals of a quantile step process: general linear functionals,
//! expected shortfall, mean excess, the Lorenz curve and two inequality ratios.
//!
//! Every function accepts any [`StepQuantileProcess`]: an empirical quantile
//! function of directly observed values, or the centered averaged two-step
//! process when the variable is seen only through a regression.

use serde::{Deserialize, Serialize};

use crate::error::{check_level, Error, Result};
use crate::model::{scaled_level, StepQuantileProcess};
use crate::quadrature::integrate;

const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Cvar,
    MeanExcess,
    Lorenz,
    GastwirthJ,
    StaudteR,
    Linear,
}

impl FunctionalKind {
    pub fn name(&self) -> &'static str {
        match self {
            FunctionalKind::Cvar => "cvar",
            FunctionalKind::MeanExcess => "mean_excess",
            FunctionalKind::Lorenz => "lorenz",
            FunctionalKind::GastwirthJ => "gastwirth_j",
            FunctionalKind::StaudteR => "staudte_r",
            FunctionalKind::Linear => "linear",
        }
    }
}

impl std::str::FromStr for FunctionalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "cvar" => FunctionalKind::Cvar,
            "mean_excess" => FunctionalKind::MeanExcess,
            "lorenz" => FunctionalKind::Lorenz,
            "gastwirth_j" => FunctionalKind::GastwirthJ,
            "staudte_r" => FunctionalKind::StaudteR,
            "linear" => FunctionalKind::Linear,
            other => {
                return Err(Error::Domain(format!(
                    "unknown functional '{other}' (expected cvar, mean_excess, lorenz, gastwirth_j, staudte_r)"
                )))
            }
        })
    }
}

impl std::fmt::Display for FunctionalKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalEstimate {
    pub kind: FunctionalKind,
    /// The level `alpha`, the threshold `gamma`, or NaN for a weight functional.
    pub level: f64,
    pub value: f64,
    pub n: usize,
}

/// `sum_k value_k * int_{(k-1)/n}^{k/n} weight(u) du`.
pub fn linear_functional<W: Fn(f64) -> f64>(proc: &StepQuantileProcess, weight: W) -> Result<f64> {
    let n = proc.len() as f64;
    let mut total = 0.0;
    for (k, v) in proc.values().iter().enumerate() {
        let cell = integrate(&weight, k as f64 / n, (k + 1) as f64 / n, QUADRATURE_TOL)?;
        total += v * cell;
    }
    Ok(total)
}

/// Expected shortfall: mean of the top `floor(n (1 - alpha))` process values.
pub fn cvar(proc: &StepQuantileProcess, alpha: f64) -> Result<FunctionalEstimate> {
    check_level(alpha, "alpha")?;
    let n = proc.len();
    let m = scaled_level(n, 1.0 - alpha).floor() as usize;
    if m == 0 {
        return Err(Error::TailTooSmall(format!(
            "floor(n (1 - alpha)) = 0 for n = {n}, alpha = {alpha}; need n (1 - alpha) >= 1"
        )));
    }
    let tail = &proc.values()[n - m..];
    Ok(FunctionalEstimate {
        kind: FunctionalKind::Cvar,
        level: alpha,
        value: tail.iter().sum::<f64>() / m as f64,
        n,
    })
}

/// Mean excess over `gamma`: mean of `value_k - gamma` over values `>= gamma`.
pub fn mean_excess(proc: &StepQuantileProcess, gamma: f64) -> Result<FunctionalEstimate> {
    if !gamma.is_finite() {
        return Err(Error::Domain(format!("threshold must be finite, got {gamma}")));
    }
    let v = proc.values();
    let start = v.partition_point(|x| *x < gamma);
    let exceed = &v[start..];
    if exceed.is_empty() {
        return Err(Error::NoExceedance(format!(
            "no process value reaches the threshold {gamma} (maximum {})",
            v[v.len() - 1]
        )));
    }
    Ok(FunctionalEstimate {
        kind: FunctionalKind::MeanExcess,
        level: gamma,
        value: exceed.iter().map(|x| x - gamma).sum::<f64>() / exceed.len() as f64,
        n: v.len(),
    })
}

fn lorenz_value(proc: &StepQuantileProcess, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("Lorenz level must lie in [0, 1], got {alpha}")));
    }
    let v = proc.values();
    if v[0] < 0.0 {
        return Err(Error::Domain(format!(
            "Lorenz curve needs nonnegative values; smallest is {}",
            v[0]
        )));
    }
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("Lorenz curve needs a positive mean".into()));
    }
    let scaled = scaled_level(v.len(), alpha);
    let whole = scaled.floor() as usize;
    let mut lower: f64 = v[..whole].iter().sum();
    if whole < v.len() {
        lower += (scaled - whole as f64) * v[whole];
    }
    Ok(lower / total)
}

/// Lorenz curve `L(alpha)` by exact integration of the step process, the last
/// cell counted fractionally. `alpha` may be anywhere in `[0, 1]`.
pub fn lorenz(proc: &StepQuantileProcess, alpha: f64) -> Result<FunctionalEstimate> {
    Ok(FunctionalEstimate {
        kind: FunctionalKind::Lorenz,
        level: alpha,
        value: lorenz_value(proc, alpha)?,
        n: proc.len(),
    })
}

/// `J(alpha) = L(alpha) / (1 - L(1 - alpha))`.
pub fn gastwirth_j(proc: &StepQuantileProcess, alpha: f64) -> Result<FunctionalEstimate> {
    check_level(alpha, "alpha")?;
    let num = lorenz_value(proc, alpha)?;
    let denom = 1.0 - lorenz_value(proc, 1.0 - alpha)?;
    if denom <= f64::EPSILON {
        return Err(Error::Degenerate(format!(
            "upper {alpha} share of the total is zero; J is undefined"
        )));
    }
    Ok(FunctionalEstimate {
        kind: FunctionalKind::GastwirthJ,
        level: alpha,
        value: num / denom,
        n: proc.len(),
    })
}

/// Symmetric quantile ratio `Q(alpha/2) / Q(1 - alpha/2)`.
pub fn staudte_r(proc: &StepQuantileProcess, alpha: f64) -> Result<FunctionalEstimate> {
    check_level(alpha, "alpha")?;
    let lower = proc.eval(alpha / 2.0)?;
    let upper = proc.eval(1.0 - alpha / 2.0)?;
    if upper == 0.0 {
        return Err(Error::Degenerate(format!(
            "upper quantile Q({}) is zero",
            1.0 - alpha / 2.0
        )));
    }
    Ok(FunctionalEstimate {
        kind: FunctionalKind::StaudteR,
        level: alpha,
        value: lower / upper,
        n: proc.len(),
    })
}

/// Dispatches on `kind`. `Linear` is rejected here: it needs a weight function.
pub fn evaluate(proc: &StepQuantileProcess, kind: FunctionalKind, level: f64) -> Result<FunctionalEstimate> {
    match kind {
        FunctionalKind::Cvar => cvar(proc, level),
        FunctionalKind::MeanExcess => mean_excess(proc, level),
        FunctionalKind::Lorenz => lorenz(proc, level),
        FunctionalKind::GastwirthJ => gastwirth_j(proc, level),
        FunctionalKind::StaudteR => staudte_r(proc, level),
        FunctionalKind::Linear => Err(Error::Domain(
            "a linear functional needs a weight function; call linear_functional directly".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::empirical_quantile_process;
    use proptest::prelude::*;

    fn proc(v: &[f64]) -> StepQuantileProcess {
        empirical_quantile_process(v).unwrap()
    }

    #[test]
    fn linear_examples() {
        assert!((linear_functional(&proc(&[1.0, 2.0, 3.0]), |_| 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(linear_functional(&proc(&[1.0, 2.0, 3.0]), |_| 0.0).unwrap(), 0.0);
        let upper = |u: f64| if u > 0.5 { 2.0 } else { 0.0 };
        assert!((linear_functional(&proc(&[1.0, 2.0, 3.0, 4.0]), upper).unwrap() - 3.5).abs() < 1e-10);
        assert!(linear_functional(&proc(&[1.0, 2.0]), |u| 1.0 / u).is_err());
    }

    #[test]
    fn cvar_examples() {
        let p = proc(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(cvar(&p, 0.6).unwrap().value, 4.5);
        assert_eq!(cvar(&p, 0.01).unwrap().value, 3.5);
        // floor(n (1 - alpha)) = n only once n alpha is within the snapping tolerance of 0
        assert_eq!(cvar(&p, 1e-12).unwrap().value, 3.0);
        assert!(matches!(cvar(&p, 0.9), Err(Error::TailTooSmall(_))));
        // 10 * (1 - 0.9) rounds just below 1 in binary
        let p10 = proc(&(1..=10).map(f64::from).collect::<Vec<_>>());
        assert_eq!(cvar(&p10, 0.9).unwrap().value, 10.0);
    }

    #[test]
    fn cvar_matches_tail_weight_functional() {
        let p = proc(&[0.3, -1.2, 2.2, 0.9, 1.7, -0.4, 3.1, 0.0]);
        let alpha = 0.75;
        let tail = |u: f64| if u > alpha { 1.0 / (1.0 - alpha) } else { 0.0 };
        let lin = linear_functional(&p, tail).unwrap();
        assert!((cvar(&p, alpha).unwrap().value - lin).abs() < 1e-9);
    }

    #[test]
    fn mean_excess_examples() {
        let p = proc(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mean_excess(&p, 2.5).unwrap().value, 1.0);
        assert_eq!(mean_excess(&p, -1.0).unwrap().value, 3.5);
        assert_eq!(mean_excess(&p, 4.0).unwrap().value, 0.0);
        assert!(matches!(mean_excess(&p, 4.5), Err(Error::NoExceedance(_))));
        assert!(mean_excess(&p, f64::NAN).is_err());
    }

    #[test]
    fn lorenz_examples() {
        let eq = proc(&[2.0; 5]);
        for a in [0.1, 0.3, 0.5, 0.77] {
            assert!((lorenz(&eq, a).unwrap().value - a).abs() < 1e-12);
        }
        assert_eq!(lorenz(&proc(&[0.0, 0.0, 0.0, 10.0]), 0.75).unwrap().value, 0.0);
        assert_eq!(lorenz(&proc(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap().value, 0.3);
        assert_eq!(lorenz(&proc(&[1.0, 2.0, 3.0, 4.0]), 1.0).unwrap().value, 1.0);
        assert!(matches!(lorenz(&proc(&[-1.0, 2.0]), 0.5), Err(Error::Domain(_))));
        assert!(matches!(lorenz(&proc(&[0.0, 0.0]), 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn gastwirth_examples() {
        assert!((gastwirth_j(&proc(&[3.0; 4]), 0.5).unwrap().value - 1.0).abs() < 1e-12);
        // L(0.5) = 3/10 and 1 - L(0.5) = 7/10
        let j = gastwirth_j(&proc(&[1.0, 2.0, 3.0, 4.0]), 0.5).unwrap().value;
        assert!((j - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(gastwirth_j(&proc(&[0.0, 0.0, 0.0, 10.0]), 0.25).unwrap().value, 0.0);
        // a zero upper share forces every value to zero, caught as a zero mean
        assert!(matches!(gastwirth_j(&proc(&[0.0; 4]), 0.25), Err(Error::Domain(_))));
    }

    #[test]
    fn staudte_examples() {
        assert_eq!(staudte_r(&proc(&[-2.5; 6]), 0.3).unwrap().value, 1.0);
        let p = proc(&(1..=10).map(f64::from).collect::<Vec<_>>());
        // order_index(0.2, 10) = 2 and order_index(0.8, 10) = 8
        assert_eq!(staudte_r(&p, 0.4).unwrap().value, 0.25);
        let scaled = p.affine(3.5, 0.0).unwrap();
        assert_eq!(staudte_r(&scaled, 0.4).unwrap().value, 0.25);
        assert!(matches!(staudte_r(&proc(&[-1.0, 0.0, 0.0]), 0.5), Err(Error::Degenerate(_))));
    }

    /// Direct sample formulas on the unsorted data, independent of the process.
    mod direct {
        pub fn top_mean(x: &[f64], m: usize) -> f64 {
            let mut pool = x.to_vec();
            let mut s = 0.0;
            for _ in 0..m {
                let (i, v) = pool
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
                s += v;
                pool.swap_remove(i);
            }
            s / m as f64
        }

        pub fn excess(x: &[f64], g: f64) -> f64 {
            let e: Vec<f64> = x.iter().filter(|v| **v >= g).map(|v| v - g).collect();
            e.iter().sum::<f64>() / e.len() as f64
        }

        /// Share of the total held by the `k` smallest values.
        pub fn lower_share(x: &[f64], k: usize) -> f64 {
            let total: f64 = x.iter().sum();
            let mut pool = x.to_vec();
            let mut s = 0.0;
            for _ in 0..k {
                let (i, v) = pool
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |b, (i, v)| if *v < b.1 { (i, *v) } else { b });
                s += v;
                pool.swap_remove(i);
            }
            s / total
        }
    }

    proptest! {
        #[test]
        fn agrees_with_direct_sample_formulas(x in prop::collection::vec(0.01f64..100.0, 4..40),
                                              k in 1usize..4, g_frac in 0.0f64..1.0) {
            let n = x.len();
            let p = proc(&x);
            // levels on the k/n grid avoid floor/ceil boundary effects
            let m = k.min(n - 1);
            let alpha = 1.0 - m as f64 / n as f64;
            let c = cvar(&p, alpha).unwrap().value;
            prop_assert!((c - direct::top_mean(&x, m)).abs() <= 1e-9 * c.abs().max(1.0));

            let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let g = g_frac * mx;
            let e = mean_excess(&p, g).unwrap().value;
            prop_assert!((e - direct::excess(&x, g)).abs() <= 1e-9 * e.abs().max(1.0));

            let l = lorenz(&p, m as f64 / n as f64).unwrap().value;
            prop_assert!((l - direct::lower_share(&x, m)).abs() <= 1e-12);
        }

        #[test]
        fn cvar_dominates_mean(x in prop::collection::vec(-100f64..100.0, 2..50), a in 0.01f64..0.5) {
            let p = proc(&x);
            let mean = linear_functional(&p, |_| 1.0).unwrap();
            let c = cvar(&p, a).unwrap();
            prop_assert!(c.value >= mean - 1e-9);
            prop_assert!(c.value >= p.eval(a).unwrap() - 1e-12);
        }

        #[test]
        fn cvar_monotone_on_grid(x in prop::collection::vec(-100f64..100.0, 3..50)) {
            let p = proc(&x);
            let n = x.len();
            let mut prev = f64::NEG_INFINITY;
            for m in (1..n).rev() {
                let v = cvar(&p, 1.0 - m as f64 / n as f64).unwrap().value;
                prop_assert!(v >= prev - 1e-9);
                prev = v;
            }
        }

        #[test]
        fn lorenz_shape(x in prop::collection::vec(0.0f64..100.0, 2..50)) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            let p = proc(&x);
            let n = x.len();
            let l: Vec<f64> = (0..=n).map(|k| lorenz(&p, k as f64 / n as f64).unwrap().value).collect();
            prop_assert_eq!(l[n], 1.0);
            prop_assert_eq!(l[0], 0.0);
            for k in 1..=n {
                prop_assert!(l[k] >= l[k - 1] - 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&l[k]));
            }
            for k in 1..n {
                prop_assert!(l[k + 1] - l[k] >= l[k] - l[k - 1] - 1e-12);
            }
        }

        #[test]
        fn staudte_invariance(x in prop::collection::vec(0.1f64..100.0, 2..50), c in 0.01f64..100.0,
                              a in 0.02f64..0.98, da in 0.0f64..0.5) {
            let p = proc(&x);
            let scaled = p.affine(c, 0.0).unwrap();
            let r1 = staudte_r(&p, a).unwrap().value;
            prop_assert!((staudte_r(&scaled, a).unwrap().value - r1).abs() <= 1e-12 * r1.abs().max(1.0));
            let b = (a + da).min(0.98);
            prop_assert!(staudte_r(&p, b).unwrap().value >= r1 - 1e-12);
        }
    }
}
