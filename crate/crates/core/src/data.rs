//! Observed right-censored samples with hard or soft censoring indicators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Censoring information attached to one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Indicator {
    /// Classical indicator `δ = 1{Y <= C}`.
    Hard(bool),
    /// Probabilistic indicator `P ∈ [0, 1]`.
    Soft(f64),
}

impl Indicator {
    /// Builds a soft indicator, clamping into `[0, 1]`.
    pub fn soft(p: f64) -> Self {
        Indicator::Soft(if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        match self {
            Indicator::Hard(true) => 1.0,
            Indicator::Hard(false) => 0.0,
            Indicator::Soft(p) => p,
        }
    }

    pub fn is_hard(self) -> bool {
        matches!(self, Indicator::Hard(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub indicator: Indicator,
}

impl ObservedSample {
    pub fn new(t: f64, x: Vec<f64>, indicator: Indicator) -> Self {
        let indicator = match indicator {
            Indicator::Soft(p) => Indicator::soft(p),
            hard => hard,
        };
        Self { t, x, indicator }
    }

    pub fn hard(t: f64, x: Vec<f64>, event: bool) -> Self {
        Self::new(t, x, Indicator::Hard(event))
    }

    pub fn soft(t: f64, x: Vec<f64>, p: f64) -> Self {
        Self::new(t, x, Indicator::soft(p))
    }
}

/// A nonempty sample sharing one covariate dimension and one indicator kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<ObservedSample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<ObservedSample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.x.len();
        let hard = first.indicator.is_hard();
        for s in &samples {
            if s.x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.x.len() });
            }
            if !s.t.is_finite() || s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("non-finite observation at time {}", s.t)));
            }
            if s.indicator.is_hard() != hard {
                return Err(Error::InvalidParameter("mixed hard and soft indicators".into()));
            }
        }
        Ok(Self { samples, dim })
    }

    /// Hard-indicator dataset from parallel columns.
    pub fn from_hard(times: &[f64], covariates: &[Vec<f64>], events: &[bool]) -> Result<Self> {
        Self::new(
            times
                .iter()
                .zip(covariates)
                .zip(events)
                .map(|((&t, x), &d)| ObservedSample::hard(t, x.clone(), d))
                .collect(),
        )
    }

    /// Soft-indicator dataset from parallel columns.
    pub fn from_soft(times: &[f64], covariates: &[Vec<f64>], probs: &[f64]) -> Result<Self> {
        Self::new(
            times
                .iter()
                .zip(covariates)
                .zip(probs)
                .map(|((&t, x), &p)| ObservedSample::soft(t, x.clone(), p))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[ObservedSample] {
        &self.samples
    }

    pub fn is_hard(&self) -> bool {
        self.samples[0].indicator.is_hard()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn covariates(&self) -> Vec<&[f64]> {
        self.samples.iter().map(|s| s.x.as_slice()).collect()
    }

    /// Indicator values as reals (`δ` or `P`).
    pub fn indicator_values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.indicator.value()).collect()
    }

    /// Event flags of a hard-indicator dataset.
    pub fn events(&self) -> Result<Vec<bool>> {
        self.samples
            .iter()
            .map(|s| match s.indicator {
                Indicator::Hard(d) => Ok(d),
                Indicator::Soft(_) => Err(Error::InvalidParameter("expected hard indicators".into())),
            })
            .collect()
    }

    /// Same times and covariates with the indicators replaced by soft values.
    pub fn with_soft_indicators(&self, probs: &[f64]) -> Result<Self> {
        if probs.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: probs.len() });
        }
        Self::new(
            self.samples
                .iter()
                .zip(probs)
                .map(|(s, &p)| ObservedSample::soft(s.t, s.x.clone(), p))
                .collect(),
        )
    }

    /// The sample with observation `i` removed; `None` when that leaves nothing.
    pub fn without(&self, i: usize) -> Option<Self> {
        let mut samples = self.samples.clone();
        samples.remove(i);
        Self::new(samples).ok()
    }
}
