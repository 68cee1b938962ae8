use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, FeatureScaler, ProbabilityModel, TrainingConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Dense layer `z = a W + b` with `W` stored row-major as `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn he_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self { weights: vec![0.0; self.weights.len()], biases: vec![0.0; self.biases.len()], ..*self }
    }

    fn w(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &self.weights).expect("layer shape")
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }
}

/// Fully connected ReLU network with a single sigmoid output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub scaler: FeatureScaler,
    pub layers: Vec<Layer>,
    /// Mean training cross-entropy before the first update and after the last epoch.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl MlpModel {
    /// He-uniform initialized network with one input per scaled feature.
    pub fn init(scaler: FeatureScaler, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(scaler, hidden, &mut rng)
    }

    fn init_with<R: Rng>(scaler: FeatureScaler, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![scaler.n_features()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes.windows(2).map(|w| Layer::he_uniform(w[0], w[1], rng)).collect();
        Self { scaler, layers, initial_loss: f64::NAN, final_loss: f64::NAN }
    }

    /// Forward pass returning the input of every layer and the output logits.
    fn forward(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Array1<f64>) {
        let mut acts = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.w());
            z += &ArrayView2::from_shape((1, layer.outputs), &layer.biases).expect("bias shape");
            if l == last {
                return (acts, z.column(0).to_owned());
            }
            z.mapv_inplace(|v| v.max(0.0));
            acts.push(z);
        }
        unreachable!("network has an output layer")
    }

    /// Output logits for already scaled feature rows.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.forward(x).1
    }

    /// Mean cross-entropy on scaled features and its gradient, laid out like `layers`.
    pub fn loss_and_gradient(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> (f64, Vec<Layer>) {
        let (acts, z) = self.forward(x);
        let b = y.len() as f64;
        let loss = z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / b;
        let mut delta = Array2::from_shape_fn((y.len(), 1), |(i, _)| (sigmoid(z[i]) - y[i]) / b);
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            let gw = acts[l].t().dot(&delta);
            grads[l].weights = gw.iter().copied().collect();
            grads[l].biases = delta.sum_axis(Axis(0)).to_vec();
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].w().t());
                back.zip_mut_with(&acts[l], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        (loss, grads)
    }

    /// All weights and biases, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                *p = *it.next().expect("parameter count");
            }
        }
    }

    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64> {
        let f = self.scaler.transform(t, x)?;
        let row = ArrayView2::from_shape((1, f.len()), &f).expect("row shape");
        Ok(sigmoid(self.logits(row)[0]))
    }

    fn mean_loss(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> f64 {
        let z = self.logits(x);
        z.iter().zip(y).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / y.len() as f64
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &[Layer], config: &TrainingConfig) {
        let (b1, b2) = config.adam_betas;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let grad = grads.iter().flat_map(|l| l.params().copied());
        let params = model.layers.iter_mut().flat_map(|l| l.params_mut());
        for (((p, g), m), v) in params.zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + config.adam_eps);
        }
    }
}

/// Minibatch Adam on the mean cross-entropy of `(T_i, X_i) -> δ_i`.
/// Initialization and shuffling both draw from `config.seed`.
pub fn fit_mlp(data: &Dataset, config: &TrainingConfig) -> Result<ProbabilityModel> {
    config.validate()?;
    let n = data.len();
    if n < 10 {
        return Err(Error::InvalidParameter("the network needs at least 10 observations".into()));
    }
    let labels = data.indicator_values();
    if data.is_hard() && labels.iter().all(|&v| v == labels[0]) {
        return Ok(ProbabilityModel::Constant { p: labels[0], single_class: true });
    }
    let scaler = FeatureScaler::fit(data);
    let (rows, y) = scaler.design(data)?;
    let d = scaler.n_features();
    let x = Array2::from_shape_vec((n, d), rows.concat()).expect("design shape");

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::init_with(scaler, &config.hidden_layers, &mut rng);
    model.initial_loss = model.mean_loss(x.view(), &y);
    let mut adam = Adam::new(model.parameters().len());
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grads) = model.loss_and_gradient(xb.view(), &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(epoch));
            }
            adam.update(&mut model, &grads, config);
        }
    }
    model.final_loss = model.mean_loss(x.view(), &y);
    if !model.final_loss.is_finite() {
        return Err(Error::NonFiniteLoss(config.epochs));
    }
    Ok(ProbabilityModel::Mlp(model))
}
