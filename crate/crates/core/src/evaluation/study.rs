use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{equidistant_grid, global_mise, paired_t_test, welch_t_test, ComparisonSummary, MseCurve, TTest, SIGNIFICANCE_LEVEL};
use crate::bandwidth::{select_bandwidth, soft_pair_weights, useful_pairs, BandwidthGrid, EstimatorKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{beran_fit, gbe_fit, SurvivalCurve};
use crate::kernel::KernelSpec;
use crate::probability::{fit_classifier, prior_indicators, ClassifierKind, ProbabilityModel, TrainingConfig, PRIOR_NOISE_SD};
use crate::synthetic::{substream, FullSample, Stream, SurvivalModel};

/// Estimators compared in a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Beran,
    /// Soft estimator fed the hard indicators, a consistency check on Beran.
    GbeDelta,
    GbeOracle,
    GbePrior,
    GbeLinear,
    GbeNn,
    GbeNw,
}

impl Variant {
    pub const ALL: [Variant; 7] =
        [Variant::Beran, Variant::GbeDelta, Variant::GbeOracle, Variant::GbePrior, Variant::GbeLinear, Variant::GbeNn, Variant::GbeNw];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Beran => "beran",
            Variant::GbeDelta => "gbe-delta",
            Variant::GbeOracle => "gbe-oracle",
            Variant::GbePrior => "gbe-prior",
            Variant::GbeLinear => "gbe-linear",
            Variant::GbeNn => "gbe-nn",
            Variant::GbeNw => "gbe-nw",
        }
    }

    pub fn classifier(self) -> Option<ClassifierKind> {
        match self {
            Variant::GbeLinear => Some(ClassifierKind::Logistic),
            Variant::GbeNn => Some(ClassifierKind::Mlp),
            Variant::GbeNw => Some(ClassifierKind::NadarayaWatson),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether estimators see the indicators of the sample they smooth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Every variant is fitted on the training sample and tuned with useful pairs.
    #[default]
    Observed,
    /// Soft variants are fitted on a fresh sample whose indicators are
    /// replaced by predicted probabilities, and tuned with probability-weighted pairs.
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub x_test: Vec<Vec<f64>>,
    pub grid_size: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n: 500, replications: 200, seed: 0, x_test: vec![vec![0.3], vec![0.5], vec![0.7]], grid_size: 100 }
    }
}

impl SimulationConfig {
    /// Test covariates `(v, ..., v)` for `v` in `{0.3, 0.5, 0.7}`.
    pub fn default_x_test(dim: usize) -> Vec<Vec<f64>> {
        [0.3, 0.5, 0.7].iter().map(|&v| vec![v; dim]).collect()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.n < 3 || self.replications < 1 || self.grid_size < 2 {
            return Err(Error::InvalidParameter("need n >= 3, replications >= 1 and grid_size >= 2".into()));
        }
        if self.x_test.is_empty() {
            return Err(Error::InvalidParameter("x_test is empty".into()));
        }
        for x in &self.x_test {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub variants: Vec<Variant>,
    pub regime: Regime,
    pub bandwidth_grid: BandwidthGrid,
    pub kernel: KernelSpec,
    pub training: TrainingConfig,
    /// Bandwidth of the Nadaraya-Watson probability model on scaled `(t, x)`.
    pub nw_bandwidth: f64,
    pub prior_noise_sd: f64,
    /// Size of the pilot sample that fixes the common time grid.
    pub pilot_size: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            variants: vec![Variant::Beran, Variant::GbeOracle, Variant::GbePrior, Variant::GbeLinear, Variant::GbeNn],
            regime: Regime::Observed,
            bandwidth_grid: BandwidthGrid::default(),
            kernel: KernelSpec::default(),
            training: TrainingConfig::default(),
            nw_bandwidth: 0.3,
            prior_noise_sd: PRIOR_NOISE_SD,
            pilot_size: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub variants: Vec<Variant>,
    pub regime: Regime,
    pub simulation: SimulationConfig,
    /// `mise[v][k]`: global MISE of variant `v` at replication `k`, `None` on failure.
    pub mise: Vec<Vec<Option<f64>>>,
    pub bandwidths: Vec<Vec<Option<f64>>>,
    pub errors: Vec<Vec<Option<String>>>,
    /// Fraction of censored training observations per replication.
    pub censoring_rates: Vec<f64>,
    pub study_grid: Vec<f64>,
    /// `mse_curves[v][j]`: MSE on the study grid at `x_test[j]` over successful replications.
    pub mse_curves: Vec<Vec<MseCurve>>,
}

impl StudyResult {
    pub fn variant_index(&self, v: Variant) -> Option<usize> {
        self.variants.iter().position(|&w| w == v)
    }

    /// Successful MISE values of one variant.
    pub fn successes(&self, v: Variant) -> Vec<f64> {
        self.variant_index(v).map(|i| self.mise[i].iter().flatten().copied().collect()).unwrap_or_default()
    }

    /// Replication-aligned MISE pairs where both variants succeeded.
    pub fn paired(&self, baseline: Variant, variant: Variant) -> (Vec<f64>, Vec<f64>) {
        let (Some(b), Some(v)) = (self.variant_index(baseline), self.variant_index(variant)) else {
            return (vec![], vec![]);
        };
        self.mise[b].iter().zip(&self.mise[v]).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip()
    }

    pub fn mean_mise(&self, v: Variant) -> f64 {
        let s = self.successes(v);
        s.iter().sum::<f64>() / s.len() as f64
    }
}

struct Replication {
    mise: Vec<Option<f64>>,
    bandwidths: Vec<Option<f64>>,
    errors: Vec<Option<String>>,
    /// Per variant, per test covariate, squared errors on the study grid.
    sq_errors: Vec<Option<Vec<Vec<f64>>>>,
    censoring_rate: f64,
}

struct Fitted {
    mise: f64,
    h: f64,
    sq_errors: Vec<Vec<f64>>,
}

fn oracle_probs(model: &dyn SurvivalModel, s: &FullSample) -> Vec<f64> {
    s.t.iter().zip(&s.x).map(|(&t, x)| model.oracle_p(t, x).clamp(0.0, 1.0)).collect()
}

fn fit_variant(
    model: &dyn SurvivalModel,
    sim: &SimulationConfig,
    study: &StudyConfig,
    study_grid: &[f64],
    hard: &Dataset,
    probs: Option<&[f64]>,
    soft_pairs: bool,
) -> Result<Fitted> {
    let (data, kind, weights) = match probs {
        None => (hard.clone(), EstimatorKind::Beran, useful_pairs(hard)?),
        Some(p) => {
            let soft = hard.with_soft_indicators(p)?;
            let w = if soft_pairs { soft_pair_weights(hard, p)? } else { useful_pairs(hard)? };
            (soft, EstimatorKind::Gbe, w)
        }
    };
    let h = select_bandwidth(&data, &study.bandwidth_grid, kind, &weights, &study.kernel)?.h_best;
    let curves = sim
        .x_test
        .iter()
        .map(|x| match kind {
            EstimatorKind::Beran => beran_fit(&data, x, h, &study.kernel),
            EstimatorKind::Gbe => gbe_fit(&data, x, h, &study.kernel),
        })
        .collect::<Result<Vec<SurvivalCurve>>>()?;
    let times = data.times();
    let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = equidistant_grid(lo, hi, sim.grid_size)?;
    let mise = global_mise(&curves, |t, x| model.true_cdf(t, x), &sim.x_test, &grid)?;
    let sq_errors = curves
        .iter()
        .zip(&sim.x_test)
        .map(|(c, x)| study_grid.iter().map(|&t| (model.true_cdf(t, x) - c.eval(t)).powi(2)).collect())
        .collect();
    Ok(Fitted { mise, h: h.value(), sq_errors })
}

fn run_replication(model: &dyn SurvivalModel, sim: &SimulationConfig, study: &StudyConfig, study_grid: &[f64], k: u64) -> Replication {
    let seed = sim.seed;
    let train = model.sample(sim.n, &mut substream(seed, k, Stream::Sample));
    let train_data = train.observed();
    let (eval_sample, prior_stream) = match study.regime {
        Regime::Observed => (train.clone(), Stream::PriorNoise),
        Regime::Missing => (model.sample(sim.n, &mut substream(seed, k, Stream::TestSample)), Stream::TestPriorNoise),
    };
    let eval_data = eval_sample.observed();
    let oracle = oracle_probs(model, &eval_sample);
    let soft_pairs = study.regime == Regime::Missing;

    let classifier_seed = substream(seed, k, Stream::Classifier).next_u64();
    let training = TrainingConfig { seed: classifier_seed, ..study.training.clone() };
    let mut classifiers: Vec<(ClassifierKind, Result<ProbabilityModel>)> = Vec::new();

    let mut out = Replication {
        mise: vec![],
        bandwidths: vec![],
        errors: vec![],
        sq_errors: vec![],
        censoring_rate: train.censoring_rate(),
    };
    for &v in &study.variants {
        let probs: Result<Option<Vec<f64>>> = match v {
            Variant::Beran => Ok(None),
            Variant::GbeDelta => Ok(Some(eval_data.indicator_values())),
            Variant::GbeOracle => Ok(Some(oracle.clone())),
            Variant::GbePrior => Ok(Some(prior_indicators(
                &eval_sample.delta,
                &oracle,
                study.prior_noise_sd,
                &mut substream(seed, k, prior_stream),
            ))),
            _ => {
                let kind = v.classifier().expect("classifier variant");
                if !classifiers.iter().any(|(c, _)| *c == kind) {
                    classifiers.push((kind, fit_classifier(kind, &train_data, &training, study.nw_bandwidth)));
                }
                let (_, fitted) = classifiers.iter().find(|(c, _)| *c == kind).expect("just trained");
                match fitted {
                    Ok(m) => m.predict_dataset(&eval_data).map(Some),
                    Err(e) => Err(e.clone()),
                }
            }
        };
        let fitted = probs.and_then(|p| fit_variant(model, sim, study, study_grid, &eval_data, p.as_deref(), soft_pairs));
        match fitted {
            Ok(f) => {
                out.mise.push(Some(f.mise));
                out.bandwidths.push(Some(f.h));
                out.errors.push(None);
                out.sq_errors.push(Some(f.sq_errors));
            }
            Err(e) => {
                out.mise.push(None);
                out.bandwidths.push(None);
                out.errors.push(Some(e.to_string()));
                out.sq_errors.push(None);
            }
        }
    }
    out
}

/// Common time grid from the 1% and 99% quantiles of a pilot sample.
fn study_grid(model: &dyn SurvivalModel, sim: &SimulationConfig, pilot_size: usize) -> Result<Vec<f64>> {
    let mut t = model.sample(pilot_size.max(100), &mut substream(sim.seed, 0, Stream::Pilot)).t;
    t.sort_by(f64::total_cmp);
    let q = |a: f64| t[((t.len() - 1) as f64 * a).round() as usize];
    equidistant_grid(q(0.01), q(0.99), sim.grid_size)
}

/// Runs `sim.replications` independent replications in parallel. Results do
/// not depend on the number of worker threads.
pub fn run_study(model: &dyn SurvivalModel, sim: &SimulationConfig, study: &StudyConfig) -> Result<StudyResult> {
    sim.validate(model.dim())?;
    study.training.validate()?;
    if study.variants.is_empty() {
        return Err(Error::InvalidParameter("no variants requested".into()));
    }
    let grid = study_grid(model, sim, study.pilot_size)?;
    let reps: Vec<Replication> = (0..sim.replications as u64)
        .into_par_iter()
        .map(|k| run_replication(model, sim, study, &grid, k))
        .collect();

    let nv = study.variants.len();
    let mut result = StudyResult {
        variants: study.variants.clone(),
        regime: study.regime,
        simulation: sim.clone(),
        mise: vec![Vec::with_capacity(reps.len()); nv],
        bandwidths: vec![Vec::with_capacity(reps.len()); nv],
        errors: vec![Vec::with_capacity(reps.len()); nv],
        censoring_rates: reps.iter().map(|r| r.censoring_rate).collect(),
        study_grid: grid.clone(),
        mse_curves: vec![],
    };
    for v in 0..nv {
        let mut sums = vec![vec![0.0; grid.len()]; sim.x_test.len()];
        let mut count = 0usize;
        for r in &reps {
            result.mise[v].push(r.mise[v]);
            result.bandwidths[v].push(r.bandwidths[v]);
            result.errors[v].push(r.errors[v].clone());
            if let Some(sq) = &r.sq_errors[v] {
                count += 1;
                for (acc, row) in sums.iter_mut().zip(sq) {
                    for (a, e) in acc.iter_mut().zip(row) {
                        *a += e;
                    }
                }
            }
        }
        result.mse_curves.push(
            sums.into_iter()
                .zip(&sim.x_test)
                .map(|(s, x)| MseCurve {
                    x_test: x.clone(),
                    grid: grid.clone(),
                    mse: s.into_iter().map(|v| if count > 0 { v / count as f64 } else { f64::NAN }).collect(),
                })
                .collect(),
        );
    }
    Ok(result)
}

/// Mean and spread of every variant plus a test against `baseline`
/// (paired by default, Welch when `welch` is set).
pub fn summarize(result: &StudyResult, baseline: Variant, welch: bool) -> Vec<ComparisonSummary> {
    result
        .variants
        .iter()
        .map(|&v| {
            let s = result.successes(v);
            let n = s.len();
            let mean = s.iter().sum::<f64>() / n.max(1) as f64;
            let sd = if n > 1 { (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { f64::NAN };
            let (b, w) = result.paired(baseline, v);
            let test: Option<TTest> = if v == baseline {
                None
            } else {
                let r = if welch { welch_t_test(&result.successes(baseline), &s) } else { paired_t_test(&b, &w) };
                match r {
                    Ok(t) => Some(t),
                    Err(Error::ZeroVariance) => {
                        let d = w.first().zip(b.first()).map(|(w, b)| w - b).unwrap_or(0.0);
                        Some(TTest { t: f64::INFINITY.copysign(d), df: (b.len().max(1) - 1) as f64, p_value: 0.0, mean_difference: d })
                    }
                    Err(_) => None,
                }
            };
            let wins = b.iter().zip(&w).filter(|(b, w)| w < b).count();
            ComparisonSummary {
                variant: v,
                mean_mise: mean,
                sd_mise: sd,
                successes: n,
                failures: result.simulation.replications - n,
                significant: test.is_some_and(|t| t.p_value < SIGNIFICANCE_LEVEL),
                test,
                win_fraction: if b.is_empty() { f64::NAN } else { wins as f64 / b.len() as f64 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::ExponentialModel;

    fn small(seed: u64) -> (SimulationConfig, StudyConfig) {
        (
            SimulationConfig { n: 60, replications: 4, seed, grid_size: 20, ..Default::default() },
            StudyConfig {
                variants: vec![Variant::Beran, Variant::GbeOracle, Variant::GbePrior, Variant::GbeLinear, Variant::GbeNw],
                pilot_size: 500,
                ..Default::default()
            },
        )
    }

    #[test]
    fn study_is_deterministic_and_complete() {
        let m = ExponentialModel::default();
        let (sim, study) = small(3);
        let a = run_study(&m, &sim, &study).unwrap();
        let b = run_study(&m, &sim, &study).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.mise.len(), 5);
        assert!(a.mise.iter().all(|m| m.len() == 4));
        assert!(a.mise.iter().flatten().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let m = ExponentialModel::default();
        let (sim, study) = small(8);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_study(&m, &sim, &study)).unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| run_study(&m, &sim, &study)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn hard_indicators_through_the_soft_estimator_tie_with_beran() {
        let m = ExponentialModel::default();
        let (sim, mut study) = small(1);
        study.variants = vec![Variant::Beran, Variant::GbeDelta];
        let r = run_study(&m, &sim, &study).unwrap();
        assert_eq!(r.mise[0], r.mise[1]);
        let s = summarize(&r, Variant::Beran, false);
        let t = s[1].test.unwrap();
        assert_eq!((t.t, t.p_value), (0.0, 1.0));
        assert!(s[0].test.is_none());
    }

    #[test]
    fn mise_is_invariant_under_replication_order() {
        let m = ExponentialModel::default();
        let (sim, study) = small(4);
        let r = run_study(&m, &sim, &study).unwrap();
        let mut v = r.successes(Variant::GbeOracle);
        let mean = r.mean_mise(Variant::GbeOracle);
        v.reverse();
        assert!((v.iter().sum::<f64>() / v.len() as f64 - mean).abs() < 1e-15);
    }

    #[test]
    fn missing_regime_runs() {
        let m = ExponentialModel::default();
        let (sim, mut study) = small(2);
        study.regime = Regime::Missing;
        let r = run_study(&m, &sim, &study).unwrap();
        let s = summarize(&r, Variant::Beran, false);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|c| c.successes + c.failures == 4));
    }
}
