//! Conditional product-limit estimators.
//!
//! For a query covariate `x` with Nadaraya–Watson weights `W_i`, the Beran
//! estimator is
//!
//! ```text
//! F_n(t|x) = 1 - Π_{T_(i) <= t} (1 - W_(i) / (1 - Σ_{j<i} W_(j)))^{δ_(i)}
//! ```
//!
//! and the generalized estimator replaces the exponent `δ_(i)` by a soft
//! indicator `P_(i) ∈ [0, 1]`. Observations are ordered by time, with larger
//! indicator values first among ties so that events precede censorings.
//! The at-risk mass `1 - Σ_{j<i} W_(j)` is accumulated from the right as
//! `Σ_{j>=i} W_(j)`, which is exact at the last observation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{density_estimate, kernel_values, Bandwidth, KernelSpec};

/// Ratios `W / at-risk` at or above this level are treated as terminal jumps.
const TERMINAL_RATIO: f64 = 1.0 - 1e-12;

/// Right-continuous step estimate of `F(·|x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub jump_times: Vec<f64>,
    pub cdf_values: Vec<f64>,
    pub x: Vec<f64>,
    pub h: f64,
}

impl SurvivalCurve {
    /// `F(t|x)`: 0 before the first jump, last value after the last one.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.cdf_values[idx - 1]
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.eval(t)
    }

    /// Generalized inverse `inf{t : F(t|x) >= alpha}`.
    pub fn quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level must lie in (0, 1), got {alpha}")));
        }
        let idx = self.cdf_values.partition_point(|&v| v < alpha);
        self.jump_times
            .get(idx)
            .copied()
            .ok_or(Error::QuantileUnattained(alpha))
    }
}

pub fn curve_eval(curve: &SurvivalCurve, t: f64) -> f64 {
    curve.eval(t)
}

pub fn curve_quantile(curve: &SurvivalCurve, alpha: f64) -> Result<f64> {
    curve.quantile(alpha)
}

/// One factor `(1 - k / at_risk)^e` of the product-limit, with `0^0 = 1`.
#[inline]
pub(crate) fn product_limit_factor(k: f64, at_risk: f64, exponent: f64) -> f64 {
    if exponent == 0.0 || k <= 0.0 {
        return 1.0;
    }
    let ratio = k / at_risk;
    if ratio >= TERMINAL_RATIO {
        return 0.0;
    }
    let base = 1.0 - ratio;
    if exponent == 1.0 {
        base
    } else {
        base.powf(exponent)
    }
}

/// Stable ordering by time ascending, indicator value descending.
pub(crate) fn event_order(times: &[f64], values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .total_cmp(&times[b])
            .then(values[b].total_cmp(&values[a]))
    });
    order
}

/// Observations with positive kernel weight at `x`, sorted, with the
/// unnormalized kernel values and the suffix (at-risk) sums.
struct Neighborhood {
    times: Vec<f64>,
    kernel: Vec<f64>,
    exponents: Vec<f64>,
    at_risk: Vec<f64>,
    total: f64,
}

impl Neighborhood {
    fn build(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> Result<Self> {
        if x.len() != data.dim() {
            return Err(Error::DimensionMismatch { expected: data.dim(), got: x.len() });
        }
        let k = kernel_values(x, &data.covariates(), h, spec);
        let total: f64 = k.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyNeighborhood);
        }
        let times = data.times();
        let values = data.indicator_values();
        let order: Vec<usize> = event_order(&times, &values)
            .into_iter()
            .filter(|&i| k[i] > 0.0)
            .collect();
        let mut at_risk = vec![0.0; order.len()];
        let mut acc = 0.0;
        for (pos, &i) in order.iter().enumerate().rev() {
            acc += k[i];
            at_risk[pos] = acc;
        }
        Ok(Self {
            times: order.iter().map(|&i| times[i]).collect(),
            kernel: order.iter().map(|&i| k[i]).collect(),
            exponents: order.iter().map(|&i| values[i]).collect(),
            at_risk,
            total,
        })
    }

    /// End index (exclusive) of the tie group starting at `start`.
    fn group_end(&self, start: usize) -> usize {
        let t = self.times[start];
        let mut end = start + 1;
        while end < self.times.len() && self.times[end] == t {
            end += 1;
        }
        end
    }

    /// Product-limit survival and cumulative hazard at every distinct time.
    fn sweep(&self) -> Sweep {
        let mut out = Sweep::default();
        let mut survival = 1.0;
        let mut hazard = 0.0;
        let mut start = 0;
        while start < self.times.len() {
            let end = self.group_end(start);
            for pos in start..end {
                let (k, r, e) = (self.kernel[pos], self.at_risk[pos], self.exponents[pos]);
                survival *= product_limit_factor(k, r, e);
                hazard += e * k / r;
            }
            out.times.push(self.times[start]);
            out.survival.push(survival);
            out.hazard.push(hazard);
            start = end;
        }
        out
    }

    fn curve(&self, x: &[f64], h: Bandwidth) -> SurvivalCurve {
        let sweep = self.sweep();
        SurvivalCurve {
            cdf_values: sweep.survival.iter().map(|s| (1.0 - s).clamp(0.0, 1.0)).collect(),
            jump_times: sweep.times,
            x: x.to_vec(),
            h: h.value(),
        }
    }
}

#[derive(Default)]
struct Sweep {
    times: Vec<f64>,
    survival: Vec<f64>,
    hazard: Vec<f64>,
}

/// Step-function evaluator for `H_n`, `H_n^u` and `Ĥ_n^u` at a fixed `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubDistributions {
    times: Vec<f64>,
    observed: Vec<f64>,
    uncensored: Option<Vec<f64>>,
    soft_uncensored: Vec<f64>,
}

impl SubDistributions {
    fn lookup(&self, values: &[f64], t: f64) -> f64 {
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            values[idx - 1]
        }
    }

    /// `H_n(t|x) = Σ W_i 1{T_i <= t}`.
    pub fn observed(&self, t: f64) -> f64 {
        self.lookup(&self.observed, t)
    }

    /// `H_n^u(t|x) = Σ W_i 1{T_i <= t, δ_i = 1}`; `None` for soft data.
    pub fn uncensored(&self, t: f64) -> Option<f64> {
        self.uncensored.as_ref().map(|v| self.lookup(v, t))
    }

    /// `Ĥ_n^u(t|x) = Σ W_i 1{T_i <= t} P_i`.
    pub fn soft_uncensored(&self, t: f64) -> f64 {
        self.lookup(&self.soft_uncensored, t)
    }
}

pub fn subdistributions(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> Result<SubDistributions> {
    let nb = Neighborhood::build(data, x, h, spec)?;
    let hard = data.is_hard();
    let mut out = SubDistributions {
        times: Vec::new(),
        observed: Vec::new(),
        uncensored: hard.then(Vec::new),
        soft_uncensored: Vec::new(),
    };
    let (mut obs, mut unc, mut soft) = (0.0, 0.0, 0.0);
    let mut start = 0;
    while start < nb.times.len() {
        let end = nb.group_end(start);
        for pos in start..end {
            let w = nb.kernel[pos] / nb.total;
            obs += w;
            soft += w * nb.exponents[pos];
            if nb.exponents[pos] == 1.0 {
                unc += w;
            }
        }
        out.times.push(nb.times[start]);
        out.observed.push(obs.min(1.0));
        out.soft_uncensored.push(soft.min(1.0));
        if let Some(v) = out.uncensored.as_mut() {
            v.push(unc.min(1.0));
        }
        start = end;
    }
    Ok(out)
}

/// Step function `Λ̂_n(·|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHazard {
    pub jump_times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CumulativeHazard {
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.jump_times.partition_point(|&s| s <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }
}

/// `Λ̂_n(t|x) = Σ_{T_(i) <= t} P_(i) W_(i) / (1 - Σ_{j<i} W_(j))`.
pub fn cumulative_hazard(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> Result<CumulativeHazard> {
    let sweep = Neighborhood::build(data, x, h, spec)?.sweep();
    Ok(CumulativeHazard { jump_times: sweep.times, values: sweep.hazard })
}

/// Beran (conditional Kaplan–Meier) estimator from hard indicators.
pub fn beran_fit(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> Result<SurvivalCurve> {
    if !data.is_hard() {
        return Err(Error::InvalidParameter("the Beran estimator needs hard indicators".into()));
    }
    Ok(Neighborhood::build(data, x, h, spec)?.curve(x, h))
}

/// Generalized Beran estimator: product-limit with real exponents `P_i`.
/// Hard indicators are accepted and read as `P_i = δ_i`.
pub fn gbe_fit(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec) -> Result<SurvivalCurve> {
    Ok(Neighborhood::build(data, x, h, spec)?.curve(x, h))
}

/// Observed gap `sup_{t <= τ1} |1 - F̂_n(t|x) - exp(-Λ̂_n(t|x))|` next to its
/// upper bound `||K||_∞ Ĥ_n^u(τ1|x) / (n h^p f_n(x) (1 - H_n(τ1|x))²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazardGap {
    pub gap: f64,
    pub bound: f64,
}

impl HazardGap {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound
    }
}

pub fn lemma1_gap(data: &Dataset, x: &[f64], h: Bandwidth, spec: &KernelSpec, tau1: f64) -> Result<HazardGap> {
    let nb = Neighborhood::build(data, x, h, spec)?;
    // Remaining mass 1 - H_n(τ1|x), summed directly over T_i > τ1.
    let first_after = nb.times.partition_point(|&s| s <= tau1);
    let remaining = nb.at_risk.get(first_after).copied().unwrap_or(0.0) / nb.total;
    if remaining <= 1e-12 {
        return Err(Error::DegenerateTail(remaining));
    }

    let sweep = nb.sweep();
    let gap = sweep
        .times
        .iter()
        .zip(sweep.survival.iter().zip(&sweep.hazard))
        .take_while(|(&t, _)| t <= tau1)
        .map(|(_, (&s, &lam))| (s - (-lam).exp()).abs())
        .fold(0.0, f64::max);

    let soft_uncensored: f64 = (0..first_after)
        .map(|pos| nb.kernel[pos] * nb.exponents[pos])
        .sum::<f64>()
        / nb.total;
    let n = data.len() as f64;
    let p = data.dim() as i32;
    let f_n = density_estimate(x, &data.covariates(), h, spec);
    let bound = spec.sup_norm(data.dim()) * soft_uncensored / (n * h.value().powi(p) * f_n * remaining * remaining);
    Ok(HazardGap { gap, bound })
}
