//! Models of the censoring probability `p(t, x) = P(Y <= C | T = t, X = x)`.

mod logistic;
mod mlp;
mod nadaraya_watson;

pub use logistic::{fit_logistic, LogisticModel};
pub use mlp::{fit_mlp, Layer, MlpModel};
pub use nadaraya_watson::{check_bandwidth_order, fit_nadaraya_watson, NwModel};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Standard deviation of the noise added to the prior indicator.
pub const PRIOR_NOISE_SD: f64 = 0.01;

/// `clamp(q² + δ (1 - q) + noise, 0, 1)`. Without noise its mean over
/// `δ ~ Bernoulli(q)` is exactly `q`.
pub fn prior_indicator(delta: bool, q: f64, noise: f64) -> f64 {
    let d = if delta { 1.0 } else { 0.0 };
    (q * q + d * (1.0 - q) + noise).clamp(0.0, 1.0)
}

/// Prior indicators for a whole sample with Gaussian noise of standard deviation `sd`.
pub fn prior_indicators<R: Rng + ?Sized>(events: &[bool], q: &[f64], sd: f64, rng: &mut R) -> Vec<f64> {
    let noise = Normal::new(0.0, sd.max(0.0)).expect("finite sd");
    events.iter().zip(q).map(|(&d, &q)| prior_indicator(d, q, noise.sample(rng))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub batch_size: usize,
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
    /// Ridge strength for the logistic model; `None` means `1 / n`.
    pub l2_penalty: Option<f64>,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            batch_size: 128,
            hidden_layers: vec![100, 100],
            seed: 0,
            l2_penalty: None,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return bad("adam parameters out of range");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layers need at least one unit");
        }
        if matches!(self.l2_penalty, Some(l) if !(l >= 0.0)) {
            return bad("l2_penalty must be nonnegative");
        }
        Ok(())
    }
}

/// Per-feature min-max scaling of `(t, x_1, ..., x_p)` to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(data: &Dataset) -> Self {
        let d = data.dim() + 1;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for s in data.samples() {
            for (k, v) in std::iter::once(s.t).chain(s.x.iter().copied()).enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Self { min, max }
    }

    pub fn identity(dim: usize) -> Self {
        Self { min: vec![0.0; dim + 1], max: vec![1.0; dim + 1] }
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    pub fn transform(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() + 1 != self.n_features() {
            return Err(Error::DimensionMismatch { expected: self.n_features() - 1, got: x.len() });
        }
        Ok(std::iter::once(t)
            .chain(x.iter().copied())
            .enumerate()
            .map(|(k, v)| {
                let range = self.max[k] - self.min[k];
                (v - self.min[k]) / if range > 0.0 { range } else { 1.0 }
            })
            .collect())
    }

    /// Scaled feature rows and labels of a dataset.
    pub(crate) fn design(&self, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let rows = data.samples().iter().map(|s| self.transform(s.t, &s.x)).collect::<Result<_>>()?;
        Ok((rows, data.indicator_values()))
    }
}

type OracleClosure = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// Known `p(t, x)`, typically from a synthetic model.
#[derive(Clone)]
pub struct OracleFn(pub Arc<OracleClosure>);

impl OracleFn {
    pub fn new(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
}

impl fmt::Debug for OracleFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OracleFn")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Logistic,
    Mlp,
    NadarayaWatson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ProbabilityModel {
    #[serde(skip)]
    Oracle(OracleFn),
    /// Constant rate; `single_class` marks a classifier fitted on one class only.
    Constant { p: f64, single_class: bool },
    Logistic(LogisticModel),
    Mlp(MlpModel),
    NadarayaWatson(NwModel),
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl ProbabilityModel {
    pub fn oracle(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ProbabilityModel::Oracle(OracleFn::new(f))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProbabilityModel::Oracle(_) => "oracle",
            ProbabilityModel::Constant { .. } => "constant",
            ProbabilityModel::Logistic(_) => "logistic",
            ProbabilityModel::Mlp(_) => "mlp",
            ProbabilityModel::NadarayaWatson(_) => "nadaraya-watson",
        }
    }

    /// Estimated `p(t, x)`, always in `[0, 1]`.
    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64> {
        let p = match self {
            ProbabilityModel::Oracle(f) => (f.0)(t, x),
            ProbabilityModel::Constant { p, .. } => *p,
            ProbabilityModel::Logistic(m) => m.predict(t, x)?,
            ProbabilityModel::Mlp(m) => m.predict(t, x)?,
            ProbabilityModel::NadarayaWatson(m) => m.predict(t, x)?,
        };
        Ok(if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
    }

    /// Predictions at every `(T_i, X_i)` of a dataset.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.samples().iter().map(|s| self.predict(s.t, &s.x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        if let ProbabilityModel::Oracle(_) = self {
            return Err(Error::Serialization("oracle models cannot be serialized".into()));
        }
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }
}

pub fn predict(model: &ProbabilityModel, t: f64, x: &[f64]) -> Result<f64> {
    model.predict(t, x)
}

/// Trains the requested classifier on `(T_i, X_i) -> δ_i`. The
/// Nadaraya-Watson variant uses `nw_bandwidth` on scaled features.
pub fn fit_classifier(kind: ClassifierKind, data: &Dataset, config: &TrainingConfig, nw_bandwidth: f64) -> Result<ProbabilityModel> {
    match kind {
        ClassifierKind::Logistic => fit_logistic(data, config),
        ClassifierKind::Mlp => fit_mlp(data, config),
        ClassifierKind::NadarayaWatson => fit_nadaraya_watson(data, nw_bandwidth, &Default::default()),
    }
}

/// Mean binary cross-entropy of predictions against labels, with
/// predictions clipped away from 0 and 1.
pub fn cross_entropy(pred: &[f64], labels: &[f64]) -> f64 {
    let eps = 1e-12;
    pred.iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / pred.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{substream, Stream};

    #[test]
    fn prior_examples() {
        assert_eq!(prior_indicator(true, 1.0, 0.0), 1.0);
        assert_eq!(prior_indicator(false, 0.5, 0.0), 0.25);
        assert_eq!(prior_indicator(true, 0.5, 0.0), 0.75);
        assert_eq!(prior_indicator(true, 0.9, 0.5), 1.0);
        assert_eq!(prior_indicator(false, 0.0, -0.5), 0.0);
    }

    #[test]
    fn prior_is_unbiased_without_noise() {
        for k in 0..=100 {
            let q = k as f64 / 100.0;
            let mean = q * prior_indicator(true, q, 0.0) + (1.0 - q) * prior_indicator(false, q, 0.0);
            assert!((mean - q).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_noise_is_reproducible() {
        let ev = [true, false, true];
        let q = [0.4, 0.5, 0.6];
        let a = prior_indicators(&ev, &q, PRIOR_NOISE_SD, &mut substream(2, 0, Stream::PriorNoise));
        let b = prior_indicators(&ev, &q, PRIOR_NOISE_SD, &mut substream(2, 0, Stream::PriorNoise));
        assert_eq!(a, b);
        assert!(a.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn scaler_maps_training_range_to_unit_interval() {
        let d = Dataset::from_hard(&[2.0, 4.0], &[vec![10.0, 5.0], vec![20.0, 5.0]], &[true, false]).unwrap();
        let s = FeatureScaler::fit(&d);
        assert_eq!(s.transform(3.0, &[15.0, 5.0]).unwrap(), vec![0.5, 0.5, 0.0]);
        assert!(s.transform(3.0, &[1.0]).is_err());
    }

    #[test]
    fn oracle_prediction_is_the_closure_value() {
        let m = ProbabilityModel::oracle(|t, x| 0.25 * t + x[0]);
        assert_eq!(m.predict(1.0, &[0.125]).unwrap(), 0.375);
        assert_eq!(m.predict(10.0, &[0.0]).unwrap(), 1.0);
        assert!(m.to_json().is_err());
    }

    #[test]
    fn constant_model_round_trips() {
        let m = ProbabilityModel::Constant { p: 0.1 + 0.2, single_class: true };
        let back = ProbabilityModel::from_json(&m.to_json().unwrap()).unwrap();
        assert!(matches!(back, ProbabilityModel::Constant { p, single_class: true } if p == 0.1 + 0.2));
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        assert!(TrainingConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainingConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn stable_link_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
