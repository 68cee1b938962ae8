use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, FeatureScaler, ProbabilityModel, TrainingConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Ridge-penalized logistic regression on scaled `(t, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub scaler: FeatureScaler,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Penalty `l2 / 2 * |w|²` added to the mean cross-entropy.
    pub l2: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LogisticModel {
    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64> {
        let z = self.scaler.transform(t, x)?;
        Ok(sigmoid(linear(&self.weights, self.bias, &z)))
    }
}

fn linear(w: &[f64], b: f64, z: &[f64]) -> f64 {
    w.iter().zip(z).map(|(w, z)| w * z).sum::<f64>() + b
}

/// Penalized objective; `beta` holds the weights followed by the bias.
fn objective(rows: &[Vec<f64>], y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let d = beta.len() - 1;
    let w = &beta.as_slice()[..d];
    let loss = rows
        .iter()
        .zip(y)
        .map(|(r, &y)| {
            let z = linear(w, beta[d], r);
            softplus(z) - y * z
        })
        .sum::<f64>()
        / rows.len() as f64;
    loss + 0.5 * l2 * w.iter().map(|w| w * w).sum::<f64>()
}

fn gradient_and_hessian(rows: &[Vec<f64>], y: &[f64], beta: &DVector<f64>, l2: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = beta.len() - 1;
    let n = rows.len() as f64;
    let mut g = DVector::zeros(d + 1);
    let mut h = DMatrix::zeros(d + 1, d + 1);
    let mut z = DVector::zeros(d + 1);
    for (r, &y) in rows.iter().zip(y) {
        z.as_mut_slice()[..d].copy_from_slice(r);
        z[d] = 1.0;
        let s = sigmoid(linear(&beta.as_slice()[..d], beta[d], r));
        g.axpy((s - y) / n, &z, 1.0);
        h.ger(s * (1.0 - s) / n, &z, &z, 1.0);
    }
    for k in 0..d {
        g[k] += l2 * beta[k];
        h[(k, k)] += l2;
    }
    (g, h)
}

/// Damped Newton iterations on the penalized mean cross-entropy. A dataset
/// with a single class yields a constant model flagged `single_class`.
pub fn fit_logistic(data: &Dataset, config: &TrainingConfig) -> Result<ProbabilityModel> {
    config.validate()?;
    let events = data.events()?;
    let n = events.len();
    let positives = events.iter().filter(|&&d| d).count();
    if positives == 0 || positives == n {
        return Ok(ProbabilityModel::Constant { p: positives as f64 / n as f64, single_class: true });
    }
    let d = data.dim() + 1;
    if n < d + 1 {
        return Err(Error::InvalidParameter(format!("logistic regression needs at least {} observations", d + 1)));
    }
    let scaler = FeatureScaler::fit(data);
    let (rows, y) = scaler.design(data)?;
    let l2 = config.l2_penalty.unwrap_or(1.0 / n as f64);

    let mut beta = DVector::zeros(d + 1);
    let mut value = objective(&rows, &y, &beta, l2);
    let mut iterations = 0;
    let (mut g, mut h) = gradient_and_hessian(&rows, &y, &beta, l2);
    while iterations < config.max_iterations && g.amax() >= config.gradient_tolerance {
        iterations += 1;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&(-&g)),
            None => -&g,
        };
        let slope = g.dot(&step);
        let mut s = 1.0;
        loop {
            let candidate = &beta + s * &step;
            let v = objective(&rows, &y, &candidate, l2);
            if v <= value + 1e-4 * s * slope || s < 1e-12 {
                beta = candidate;
                value = v;
                break;
            }
            s *= 0.5;
        }
        (g, h) = gradient_and_hessian(&rows, &y, &beta, l2);
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(iterations));
    }
    Ok(ProbabilityModel::Logistic(LogisticModel {
        scaler,
        weights: beta.as_slice()[..d].to_vec(),
        bias: beta[d],
        l2,
        iterations,
        gradient_norm: g.amax(),
    }))
}
