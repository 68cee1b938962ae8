//! Leave-one-out cross-validated bandwidth selection.
//!
//! The criterion is
//!
//! ```text
//! CV(h) = Σ_i Σ_{j != i} Δ_ij (1{T_i <= T_j} - F_h^{(-i)}(T_j | X_i))²
//! ```
//!
//! where `F_h^{(-i)}` is the estimator fitted without observation `i` and
//! `Δ_ij` weights the pairs whose observed ordering is informative about the
//! ordering of the true event times. Diagonal pairs are excluded.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{event_order, product_limit_factor};
use crate::kernel::{Bandwidth, KernelSpec, MultivariateMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BandwidthGrid {
    values: Vec<f64>,
}

impl BandwidthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("bandwidth grid is empty".into()));
        }
        if values.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidParameter("bandwidths must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("bandwidth grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every value multiplied by `factor` (for covariates that are not unit-scaled).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|h| h * factor).collect())
    }
}

impl Default for BandwidthGrid {
    /// `{0.1, 0.2, …, 1.0}`.
    fn default() -> Self {
        Self { values: (1..=10).map(|k| k as f64 / 10.0).collect() }
    }
}

impl TryFrom<Vec<f64>> for BandwidthGrid {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<BandwidthGrid> for Vec<f64> {
    fn from(g: BandwidthGrid) -> Self {
        g.values
    }
}

/// Dense `n × n` pair weights `Δ_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    n: usize,
    values: Vec<f64>,
}

impl PairWeights {
    fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    values[i * n + j] = f(i, j);
                }
            }
        }
        Self { n, values }
    }

    /// All off-diagonal pairs weighted by `w`.
    pub fn constant(n: usize, w: f64) -> Self {
        Self::from_fn(n, |_, _| w)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }
}

/// `Δ_ij = 1` iff `(T_i <= T_j and δ_i = 1)` or `(T_j <= T_i and δ_j = 1)`.
pub fn useful_pairs(data: &Dataset) -> Result<PairWeights> {
    let events = data.events()?;
    let t = data.times();
    Ok(PairWeights::from_fn(data.len(), |i, j| {
        let useful = (t[i] <= t[j] && events[i]) || (t[j] <= t[i] && events[j]);
        if useful {
            1.0
        } else {
            0.0
        }
    }))
}

/// Weights for unobserved indicators: `Δ_ij = p_i` if `T_i <= T_j`, else `p_j`.
pub fn soft_pair_weights(data: &Dataset, probs: &[f64]) -> Result<PairWeights> {
    if probs.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), got: probs.len() });
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidParameter("pair probabilities must lie in [0, 1]".into()));
    }
    let t = data.times();
    Ok(PairWeights::from_fn(data.len(), |i, j| if t[i] <= t[j] { probs[i] } else { probs[j] }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Beran,
    Gbe,
}

/// Precomputed state for scoring many bandwidths on one dataset.
pub struct LooCv<'a> {
    data: &'a Dataset,
    spec: KernelSpec,
    order: Vec<usize>,
    times: Vec<f64>,
    exponents: Vec<f64>,
    /// Pairwise squared distances, row-major; radial mode only.
    sq_dist: Option<Vec<f64>>,
}

impl<'a> LooCv<'a> {
    pub fn new(data: &'a Dataset, kind: EstimatorKind, spec: &KernelSpec) -> Result<Self> {
        if data.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "cross-validation needs at least 3 observations, got {}",
                data.len()
            )));
        }
        if kind == EstimatorKind::Beran && !data.is_hard() {
            return Err(Error::InvalidParameter("the Beran estimator needs hard indicators".into()));
        }
        let times = data.times();
        let exponents = data.indicator_values();
        let order = event_order(&times, &exponents);
        let n = data.len();
        let sq_dist = (spec.mode == MultivariateMode::Radial).then(|| {
            let xs = data.covariates();
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let v: f64 = xs[i].iter().zip(xs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    d[i * n + j] = v;
                    d[j * n + i] = v;
                }
            }
            d
        });
        Ok(Self { data, spec: *spec, order, times, exponents, sq_dist })
    }

    fn kernel_row(&self, i: usize, h: f64, out: &mut [f64]) {
        let n = self.data.len();
        match &self.sq_dist {
            Some(d) => {
                let inv_h2 = 1.0 / (h * h);
                for (o, &d2) in out.iter_mut().zip(&d[i * n..(i + 1) * n]) {
                    *o = self.spec.family.radial_profile(d2 * inv_h2);
                }
            }
            None => {
                let xs = self.data.covariates();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = self.spec.unnormalized_between(xs[i], xs[j], h);
                }
            }
        }
    }

    /// Contribution of row `i` to the criterion, or `None` when the
    /// leave-one-out neighborhood of `X_i` is empty.
    fn row_score(&self, i: usize, h: f64, weights: &PairWeights, k: &mut [f64], at_risk: &mut [f64]) -> Option<f64> {
        self.kernel_row(i, h, k);
        k[i] = 0.0;
        let mut acc = 0.0;
        for (pos, &j) in self.order.iter().enumerate().rev() {
            acc += k[j];
            at_risk[pos] = acc;
        }
        if acc <= 0.0 {
            return None;
        }
        let delta = weights.row(i);
        let ti = self.times[i];
        let n = self.order.len();
        let mut survival = 1.0;
        let mut score = 0.0;
        let mut start = 0;
        while start < n {
            let t = self.times[self.order[start]];
            let mut end = start;
            while end < n && self.times[self.order[end]] == t {
                let j = self.order[end];
                survival *= product_limit_factor(k[j], at_risk[end], self.exponents[j]);
                end += 1;
            }
            let f = 1.0 - survival;
            let target = if ti <= t { 1.0 } else { 0.0 };
            for &j in &self.order[start..end] {
                let d = delta[j];
                if d != 0.0 {
                    score += d * (target - f) * (target - f);
                }
            }
            start = end;
        }
        Some(score)
    }

    /// Criterion value at `h`; `+∞` if any leave-one-out fit is infeasible.
    pub fn score(&self, h: Bandwidth, weights: &PairWeights) -> Result<f64> {
        let n = self.data.len();
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
        }
        let mut k = vec![0.0; n];
        let mut at_risk = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n {
            match self.row_score(i, h.value(), weights, &mut k, &mut at_risk) {
                Some(s) => total += s,
                None => return Ok(f64::INFINITY),
            }
        }
        Ok(total)
    }
}

pub fn loo_cv_score(
    data: &Dataset,
    h: Bandwidth,
    kind: EstimatorKind,
    weights: &PairWeights,
    spec: &KernelSpec,
) -> Result<f64> {
    LooCv::new(data, kind, spec)?.score(h, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub h_best: Bandwidth,
    /// Criterion per grid value, aligned with the grid.
    pub scores: Vec<f64>,
}

/// Grid search for the minimizer of [`loo_cv_score`]; ties go to the smallest `h`.
/// Grid values are scored in parallel on the current rayon pool.
pub fn select_bandwidth(
    data: &Dataset,
    grid: &BandwidthGrid,
    kind: EstimatorKind,
    weights: &PairWeights,
    spec: &KernelSpec,
) -> Result<BandwidthSelection> {
    let cv = LooCv::new(data, kind, spec)?;
    let scores = grid
        .values()
        .par_iter()
        .map(|&h| cv.score(Bandwidth::new(h)?, weights))
        .collect::<Result<Vec<f64>>>()?;
    let mut best: Option<usize> = None;
    for (idx, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(idx);
        }
    }
    let idx = best.ok_or(Error::AllInfeasible)?;
    Ok(BandwidthSelection { h_best: Bandwidth::new(grid.values()[idx])?, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{beran_fit, gbe_fit};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Double loop over fresh leave-one-out fits.
    fn reference_score(data: &Dataset, h: f64, kind: EstimatorKind, w: &PairWeights, spec: &KernelSpec) -> f64 {
        let h = Bandwidth::new(h).unwrap();
        let t = data.times();
        let mut total = 0.0;
        for i in 0..data.len() {
            let rest = data.without(i).unwrap();
            let xi = &data.samples()[i].x;
            let fit = match kind {
                EstimatorKind::Beran => beran_fit(&rest, xi, h, spec),
                EstimatorKind::Gbe => gbe_fit(&rest, xi, h, spec),
            };
            let curve = match fit {
                Ok(c) => c,
                Err(Error::EmptyNeighborhood) => return f64::INFINITY,
                Err(e) => panic!("{e}"),
            };
            for j in 0..data.len() {
                if j == i {
                    continue;
                }
                let target = if t[i] <= t[j] { 1.0 } else { 0.0 };
                total += w.get(i, j) * (target - curve.eval(t[j])).powi(2);
            }
        }
        total
    }

    fn random_hard(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let times: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() / 4.0).collect();
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        Dataset::from_hard(&times, &xs, &events).unwrap()
    }

    #[test]
    fn useful_pair_examples() {
        let xs = vec![vec![0.0]; 2];
        let d = Dataset::from_hard(&[1.0, 2.0], &xs, &[true, true]).unwrap();
        let w = useful_pairs(&d).unwrap();
        assert_eq!((w.get(0, 1), w.get(1, 0)), (1.0, 1.0));
        assert_eq!((w.get(0, 0), w.get(1, 1)), (0.0, 0.0));

        let d = Dataset::from_hard(&[1.0, 2.0], &xs, &[false, false]).unwrap();
        let w = useful_pairs(&d).unwrap();
        assert_eq!((w.get(0, 1), w.get(1, 0)), (0.0, 0.0));

        // T=(1,2), δ=(0,1): neither clause fires in either orientation.
        let d = Dataset::from_hard(&[1.0, 2.0], &xs, &[false, true]).unwrap();
        let w = useful_pairs(&d).unwrap();
        assert_eq!((w.get(0, 1), w.get(1, 0)), (0.0, 0.0));
    }

    #[test]
    fn useful_pairs_match_clause_enumeration() {
        // Every dataset with n <= 4, times in {0, 1, 2} and all event patterns.
        for n in 1..=4usize {
            let combos = 3usize.pow(n as u32) * (1 << n);
            for code in 0..combos {
                let mut c = code;
                let times: Vec<f64> = (0..n).map(|_| { let v = c % 3; c /= 3; v as f64 }).collect();
                let events: Vec<bool> = (0..n).map(|_| { let v = c % 2 == 1; c /= 2; v }).collect();
                let d = Dataset::from_hard(&times, &vec![vec![0.0]; n], &events).unwrap();
                let w = useful_pairs(&d).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let mut expected = 0.0;
                        if i != j {
                            let clause_i = times[i] <= times[j] && events[i];
                            let clause_j = times[j] <= times[i] && events[j];
                            if clause_i || clause_j {
                                expected = 1.0;
                            }
                        }
                        assert_eq!(w.get(i, j), expected, "times {times:?} events {events:?} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn soft_pair_examples() {
        let xs = vec![vec![0.0]; 3];
        let d = Dataset::from_hard(&[1.0, 2.0, 3.0], &xs, &[true, false, true]).unwrap();
        let w = soft_pair_weights(&d, &[1.0; 3]).unwrap();
        assert_eq!(w, PairWeights::constant(3, 1.0));

        let d = Dataset::from_hard(&[1.0, 2.0], &xs[..2], &[true, false]).unwrap();
        let w = soft_pair_weights(&d, &[0.3, 0.8]).unwrap();
        assert_eq!((w.get(0, 1), w.get(1, 0)), (0.3, 0.3));
        assert!(soft_pair_weights(&d, &[0.3, 1.5]).is_err());
    }

    #[test]
    fn hard_probabilities_reproduce_useful_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let d = random_hard(12, &mut rng);
            let probs = d.indicator_values();
            let soft = soft_pair_weights(&d, &probs).unwrap();
            let hard = useful_pairs(&d).unwrap();
            let t = d.times();
            for i in 0..d.len() {
                for j in 0..d.len() {
                    // At tied times the soft rule keeps only the first clause.
                    assert!(soft.get(i, j) <= hard.get(i, j));
                    if t[i] != t[j] {
                        assert_eq!(soft.get(i, j), hard.get(i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn score_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_hard(10, &mut rng);
        let spec = KernelSpec::default();
        let h = Bandwidth::new(0.5).unwrap();
        let zero = PairWeights::constant(10, 0.0);
        assert_eq!(loo_cv_score(&d, h, EstimatorKind::Beran, &zero, &spec).unwrap(), 0.0);

        let small = Dataset::from_hard(&[1.0, 2.0], &[vec![0.0], vec![0.0]], &[true, true]).unwrap();
        assert!(loo_cv_score(&small, h, EstimatorKind::Beran, &PairWeights::constant(2, 1.0), &spec).is_err());
    }

    #[test]
    fn perfect_estimator_scores_zero() {
        // Covariates far apart relative to h, each with a twin at the same time:
        // the leave-one-out fit at X_i only sees the twin, so it jumps to 1 at T_i.
        let times = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let xs: Vec<Vec<f64>> = [0.0, 0.0, 5.0, 5.0, 10.0, 10.0].iter().map(|&v| vec![v]).collect();
        let d = Dataset::from_hard(&times, &xs, &[true; 6]).unwrap();
        let w = useful_pairs(&d).unwrap();
        let s = loo_cv_score(&d, Bandwidth::new(0.5).unwrap(), EstimatorKind::Beran, &w, &KernelSpec::default()).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn hand_built_four_point_dataset() {
        let d = Dataset::from_hard(
            &[0.5, 1.0, 1.5, 2.5],
            &[vec![0.1], vec![0.3], vec![0.35], vec![0.6]],
            &[true, false, true, true],
        )
        .unwrap();
        let spec = KernelSpec::default();
        let w = useful_pairs(&d).unwrap();
        for h in [0.3, 0.5, 1.0] {
            let fast = loo_cv_score(&d, Bandwidth::new(h).unwrap(), EstimatorKind::Beran, &w, &spec).unwrap();
            let slow = reference_score(&d, h, EstimatorKind::Beran, &w, &spec);
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-10);
        }
        // h = 0.1 isolates X = 0.1 and X = 0.6.
        let s = loo_cv_score(&d, Bandwidth::new(0.1).unwrap(), EstimatorKind::Beran, &w, &spec).unwrap();
        assert_eq!(s, f64::INFINITY);
    }

    #[test]
    fn selection_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_hard(30, &mut rng);
        let spec = KernelSpec::default();
        let w = useful_pairs(&d).unwrap();

        let single = BandwidthGrid::new(vec![0.7]).unwrap();
        let sel = select_bandwidth(&d, &single, EstimatorKind::Beran, &w, &spec).unwrap();
        assert_eq!(sel.h_best.value(), 0.7);

        let two = BandwidthGrid::new(vec![0.3, 0.9]).unwrap();
        let sel = select_bandwidth(&d, &two, EstimatorKind::Beran, &w, &spec).unwrap();
        let expected = if sel.scores[0] <= sel.scores[1] { 0.3 } else { 0.9 };
        assert_eq!(sel.h_best.value(), expected);

        // Equal scores resolve to the smallest bandwidth.
        let zero = PairWeights::constant(30, 0.0);
        let sel = select_bandwidth(&d, &BandwidthGrid::default(), EstimatorKind::Beran, &zero, &spec).unwrap();
        let first_finite = BandwidthGrid::default().values()[sel.scores.iter().position(|s| s.is_finite()).unwrap()];
        assert_eq!(sel.h_best.value(), first_finite);

        let tiny = BandwidthGrid::new(vec![1e-6, 2e-6]).unwrap();
        assert_eq!(
            select_bandwidth(&d, &tiny, EstimatorKind::Beran, &w, &spec),
            Err(Error::AllInfeasible)
        );
    }

    #[test]
    fn grid_validation() {
        assert!(BandwidthGrid::new(vec![]).is_err());
        assert!(BandwidthGrid::new(vec![0.2, 0.1]).is_err());
        assert!(BandwidthGrid::new(vec![0.0, 0.1]).is_err());
        assert_eq!(BandwidthGrid::default().values().len(), 10);
        assert_abs_diff_eq!(BandwidthGrid::default().values()[9], 1.0);
    }

    #[test]
    fn soft_rule_with_hard_probabilities_gives_same_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let spec = KernelSpec::default();
        for _ in 0..10 {
            let n = 25;
            let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let d = Dataset::from_hard(&times, &xs, &events).unwrap();
            let hard = useful_pairs(&d).unwrap();
            let soft = soft_pair_weights(&d, &d.indicator_values()).unwrap();
            let h = Bandwidth::new(0.6).unwrap();
            let a = loo_cv_score(&d, h, EstimatorKind::Beran, &hard, &spec).unwrap();
            let b = loo_cv_score(&d, h, EstimatorKind::Beran, &soft, &spec).unwrap();
            assert_eq!(a, b);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn fast_score_matches_reference(seed in any::<u64>(), n in 3usize..25, soft in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = random_hard(n, &mut rng);
            let kind = if soft {
                let probs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                d = d.with_soft_indicators(&probs).unwrap();
                EstimatorKind::Gbe
            } else {
                EstimatorKind::Beran
            };
            let spec = KernelSpec::default();
            let w = soft_pair_weights(&d, &d.indicator_values()).unwrap();
            for h in [0.2, 0.5, 1.0] {
                let fast = loo_cv_score(&d, Bandwidth::new(h).unwrap(), kind, &w, &spec).unwrap();
                let slow = reference_score(&d, h, kind, &w, &spec);
                prop_assert!(fast == slow || (fast - slow).abs() <= 1e-10, "{fast} vs {slow}");
            }
        }

        #[test]
        fn selection_ignores_sample_order(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 30;
            let times: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
            let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
            let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            let d = Dataset::from_hard(&times, &xs, &events).unwrap();
            let mut samples = d.samples().to_vec();
            samples.reverse();
            let r = Dataset::new(samples).unwrap();
            let spec = KernelSpec::default();
            let grid = BandwidthGrid::default();
            let a = select_bandwidth(&d, &grid, EstimatorKind::Beran, &useful_pairs(&d).unwrap(), &spec);
            let b = select_bandwidth(&r, &grid, EstimatorKind::Beran, &useful_pairs(&r).unwrap(), &spec);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    for (x, y) in a.scores.iter().zip(&b.scores) {
                        prop_assert!(x == y || (x - y).abs() <= 1e-9 * x.abs().max(1.0));
                    }
                    let best = a.scores.iter().cloned().filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
                    let near_ties = a.scores.iter().filter(|s| (*s - best).abs() <= 1e-9 * best.max(1.0)).count();
                    if near_ties == 1 {
                        prop_assert_eq!(a.h_best, b.h_best);
                    }
                }
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false),
            }
        }
    }
}
