use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::gbe_fit;
use crate::kernel::{Bandwidth, KernelSpec};
use crate::synthetic::{substream, true_f_exponential, ExponentialModel, Stream, SurvivalModel};

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 50)
}

/// Which soft indicator enters the asymptotic variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndicatorChoice {
    /// `P = p(T, X)`, so `E[P² | T] = p²`.
    Oracle,
    /// `P = δ`, so `E[P² | T] = p`.
    Hard,
}

/// Asymptotic variance of `sqrt(n h) (F̂_n(t|x) - F(t|x))` under the
/// exponential model:
/// `(|K|₂² / f(x)) (1 - F(t|x))² ∫_0^t E[P² | T = y] / (1 - H(y|x))² dH(y|x)`.
pub fn gamma_hat_exponential(model: &ExponentialModel, x: f64, t: f64, choice: IndicatorChoice, kernel: &KernelSpec) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("x = {x} lies outside the covariate support")));
    }
    if t <= 0.0 {
        return Ok(0.0);
    }
    let tail = 1.0 - model.observed_cdf(t, x);
    if tail < 1e-6 {
        return Err(Error::DegenerateTail(tail));
    }
    let p = model.event_probability(x);
    let e_p2 = match choice {
        IndicatorChoice::Oracle => p * p,
        IndicatorChoice::Hard => p,
    };
    let rate = model.observed_rate(x);
    let integrand = |y: f64| {
        let surv = 1.0 - model.observed_cdf(y, x);
        e_p2 * rate * (-rate * y).exp() / (surv * surv)
    };
    let integral = adaptive_simpson(&integrand, 0.0, t, 1e-10);
    let covariate_density = 1.0;
    let survival = 1.0 - true_f_exponential(t, x, model);
    Ok(kernel.l2_norm_sq(1) / covariate_density * survival * survival * integral)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceDiagnostic {
    pub empirical: f64,
    pub theoretical: f64,
    /// Mean of the scaled error, an indication of the smoothing bias.
    pub mean_scaled_error: f64,
    pub replications: usize,
}

impl VarianceDiagnostic {
    pub fn ratio(&self) -> f64 {
        self.empirical / self.theoretical
    }
}

/// Monte-Carlo variance of `sqrt(n h) (F̂_n(t|x) - F(t|x))` for the estimator
/// with oracle indicators, next to its asymptotic value.
#[allow(clippy::too_many_arguments)]
pub fn variance_diagnostic(
    model: &ExponentialModel,
    x: f64,
    t: f64,
    n: usize,
    h: Bandwidth,
    replications: usize,
    seed: u64,
    kernel: &KernelSpec,
) -> Result<VarianceDiagnostic> {
    if replications < 2 || n < 2 {
        return Err(Error::InvalidParameter("need at least two replications of at least two observations".into()));
    }
    let theoretical = gamma_hat_exponential(model, x, t, IndicatorChoice::Oracle, kernel)?;
    let truth = true_f_exponential(t, x, model);
    let scale = (n as f64 * h.value()).sqrt();
    let errors = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let s = model.sample(n, &mut substream(seed, r, Stream::Sample));
            let probs: Vec<f64> = s.x.iter().map(|xi| model.event_probability(xi[0])).collect();
            let data = Dataset::from_soft(&s.t, &s.x, &probs)?;
            Ok(scale * (gbe_fit(&data, &[x], h, kernel)?.eval(t) - truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = errors.iter().sum::<f64>() / replications as f64;
    let empirical = errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (replications - 1) as f64;
    Ok(VarianceDiagnostic { empirical, theoretical, mean_scaled_error: m, replications })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simpson_integrates_known_functions() {
        assert_abs_diff_eq!(adaptive_simpson(&|x: f64| x.exp(), 0.0, 2.0, 1e-12), 2f64.exp() - 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(adaptive_simpson(&|x: f64| x.sqrt(), 0.0, 1.0, 1e-10), 2.0 / 3.0, epsilon = 1e-8);
        assert_eq!(adaptive_simpson(&|_| 1.0, 1.0, 1.0, 1e-8), 0.0);
    }

    #[test]
    fn closed_forms_for_both_indicators() {
        let m = ExponentialModel::default();
        let k = KernelSpec::default();
        let (x, t) = (0.4, 0.9);
        let a = m.survival_mean(x);
        let p = m.event_probability(x);
        let grow = (m.observed_rate(x) * t).exp() - 1.0;
        let front = 5.0 / 7.0 * (-2.0 * t / a).exp();
        let oracle = gamma_hat_exponential(&m, x, t, IndicatorChoice::Oracle, &k).unwrap();
        let hard = gamma_hat_exponential(&m, x, t, IndicatorChoice::Hard, &k).unwrap();
        assert_abs_diff_eq!(oracle, front * p * p * grow, epsilon = 1e-8);
        assert_abs_diff_eq!(hard, front * p * grow, epsilon = 1e-8);
    }

    #[test]
    fn oracle_indicator_minimizes_variance() {
        let m = ExponentialModel::default();
        let k = KernelSpec::default();
        for l in 1..=20 {
            let t = 0.15 * l as f64;
            let o = gamma_hat_exponential(&m, 0.5, t, IndicatorChoice::Oracle, &k).unwrap();
            let h = gamma_hat_exponential(&m, 0.5, t, IndicatorChoice::Hard, &k).unwrap();
            assert!(o <= h);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let m = ExponentialModel::default();
        let k = KernelSpec::default();
        assert_eq!(gamma_hat_exponential(&m, 0.5, -1.0, IndicatorChoice::Oracle, &k), Ok(0.0));
        assert!(matches!(gamma_hat_exponential(&m, 0.5, 100.0, IndicatorChoice::Oracle, &k), Err(Error::DegenerateTail(_))));
        let d = variance_diagnostic(&m, 0.5, -1.0, 50, Bandwidth::new(0.3).unwrap(), 10, 1, &k).unwrap();
        assert_eq!((d.empirical, d.theoretical), (0.0, 0.0));
    }

    #[test]
    fn small_diagnostic_is_in_the_right_range() {
        let m = ExponentialModel::default();
        let t = m.survival_mean(0.5) * 2f64.ln();
        let d = variance_diagnostic(&m, 0.5, t, 1000, Bandwidth::new(0.3).unwrap(), 200, 5, &KernelSpec::default()).unwrap();
        assert!(d.ratio() > 0.6 && d.ratio() < 1.6, "{d:?}");
    }
}
