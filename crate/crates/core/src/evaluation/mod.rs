//! Error curves, significance tests, replication studies and the asymptotic
//! variance diagnostic.

mod study;
mod variance;

pub use study::{run_study, summarize, Regime, SimulationConfig, StudyConfig, StudyResult, Variant};
pub use variance::{adaptive_simpson, gamma_hat_exponential, variance_diagnostic, IndicatorChoice, VarianceDiagnostic};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimator::SurvivalCurve;

/// Anything that can be read as a conditional distribution function in `t`.
pub trait Cdf {
    fn cdf(&self, t: f64) -> f64;
}

impl Cdf for SurvivalCurve {
    fn cdf(&self, t: f64) -> f64 {
        self.eval(t)
    }
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, t: f64) -> f64 {
        self(t)
    }
}

/// `size` equidistant points from `lo` to `hi` inclusive.
pub fn equidistant_grid(lo: f64, hi: f64, size: usize) -> Result<Vec<f64>> {
    if size < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("cannot build a {size}-point grid on [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (size - 1) as f64;
    Ok((0..size).map(|l| if l == size - 1 { hi } else { lo + step * l as f64 }).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCurve {
    pub x_test: Vec<f64>,
    pub grid: Vec<f64>,
    pub mse: Vec<f64>,
}

/// Pointwise mean over replications of `(F(t_l|x) - F̂^k(t_l|x))²`.
pub fn mse_curve<C: Cdf>(true_f: impl Fn(f64) -> f64, curves: &[C], x_test: &[f64], grid: &[f64]) -> Result<MseCurve> {
    if curves.is_empty() {
        return Err(Error::InvalidParameter("at least one curve is required".into()));
    }
    let n = curves.len() as f64;
    let mse = grid
        .iter()
        .map(|&t| {
            let f = true_f(t);
            curves.iter().map(|c| (f - c.cdf(t)).powi(2)).sum::<f64>() / n
        })
        .collect();
    Ok(MseCurve { x_test: x_test.to_vec(), grid: grid.to_vec(), mse })
}

/// Mean of the squared error over every test covariate and grid point of
/// one replication; `curves[k]` is the fit at `x_test[k]`.
pub fn global_mise<C: Cdf>(curves: &[C], true_f: impl Fn(f64, &[f64]) -> f64, x_test: &[Vec<f64>], grid: &[f64]) -> Result<f64> {
    if curves.len() != x_test.len() || curves.is_empty() || grid.is_empty() {
        return Err(Error::DimensionMismatch { expected: x_test.len(), got: curves.len() });
    }
    let mut total = 0.0;
    for (c, x) in curves.iter().zip(x_test) {
        for &t in grid {
            total += (true_f(t, x) - c.cdf(t)).powi(2);
        }
    }
    Ok(total / (curves.len() * grid.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    /// Mean of `variant - baseline`.
    pub mean_difference: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, s2)
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

/// Two-sided paired t-test on `variant - baseline`. Identical sequences give
/// `t = 0, p = 1`; a nonzero constant difference is [`Error::ZeroVariance`].
pub fn paired_t_test(baseline: &[f64], variant: &[f64]) -> Result<TTest> {
    if baseline.len() != variant.len() {
        return Err(Error::DimensionMismatch { expected: baseline.len(), got: variant.len() });
    }
    if baseline.len() < 2 {
        return Err(Error::InvalidParameter("a paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = variant.iter().zip(baseline).map(|(v, b)| v - b).collect();
    let (m, s2) = mean_var(&d);
    let df = (d.len() - 1) as f64;
    if d.iter().all(|&x| x == d[0]) {
        return if d[0] == 0.0 {
            Ok(TTest { t: 0.0, df, p_value: 1.0, mean_difference: 0.0 })
        } else {
            Err(Error::ZeroVariance)
        };
    }
    let t = m / (s2 / d.len() as f64).sqrt();
    Ok(TTest { t, df, p_value: two_sided_p(t, df), mean_difference: m })
}

/// Two-sided Welch test for unequal variances.
pub fn welch_t_test(baseline: &[f64], variant: &[f64]) -> Result<TTest> {
    if baseline.len() < 2 || variant.len() < 2 {
        return Err(Error::InvalidParameter("each sample needs at least two values".into()));
    }
    let (mb, vb) = mean_var(baseline);
    let (mv, vv) = mean_var(variant);
    let (sb, sv) = (vb / baseline.len() as f64, vv / variant.len() as f64);
    let se2 = sb + sv;
    if se2 == 0.0 {
        return if mb == mv {
            Ok(TTest { t: 0.0, df: (baseline.len() + variant.len() - 2) as f64, p_value: 1.0, mean_difference: 0.0 })
        } else {
            Err(Error::ZeroVariance)
        };
    }
    let df = se2 * se2 / (sb * sb / (baseline.len() - 1) as f64 + sv * sv / (variant.len() - 1) as f64);
    let t = (mv - mb) / se2.sqrt();
    Ok(TTest { t, df, p_value: two_sided_p(t, df), mean_difference: mv - mb })
}

/// Significance level used for the marker in summaries.
pub const SIGNIFICANCE_LEVEL: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub variant: Variant,
    pub mean_mise: f64,
    pub sd_mise: f64,
    pub successes: usize,
    pub failures: usize,
    /// Test against the baseline on replications where both succeeded;
    /// `None` for the baseline itself.
    pub test: Option<TTest>,
    pub significant: bool,
    /// Fraction of paired replications where the variant beats the baseline.
    pub win_fraction: f64,
}
