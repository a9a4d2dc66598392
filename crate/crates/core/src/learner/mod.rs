//! Linear RRoI learner: a single fully connected layer from a flattened
//! pooled feature to an [`OffsetVector`], trained with smooth-L1 loss by
//! mini-batch gradient descent.

pub mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::OffsetVector;
use crate::error::{Error, Result};
use crate::roi_align::PooledFeature;

/// Width of the regression output `(tx, ty, tw, th, ttheta)`.
pub const OUTPUTS: usize = 5;

const MODEL_MAGIC: &str = "rroi-linear-regressor";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegressor {
    feature_dim: usize,
    /// `feature_dim × OUTPUTS`, row-major.
    weights: Vec<f64>,
    bias: [f64; OUTPUTS],
}

impl LinearRegressor {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            weights: vec![0.0; feature_dim * OUTPUTS],
            bias: [0.0; OUTPUTS],
        }
    }

    pub fn from_parts(feature_dim: usize, weights: Vec<f64>, bias: [f64; OUTPUTS]) -> Result<Self> {
        if weights.len() != feature_dim * OUTPUTS {
            return Err(Error::Shape(format!(
                "{} weights for feature_dim {feature_dim}",
                weights.len()
            )));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(Self {
            feature_dim,
            weights,
            bias,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn bias(&self) -> &[f64; OUTPUTS] {
        &self.bias
    }

    pub fn weight(&self, feature: usize, output: usize) -> f64 {
        self.weights[feature * OUTPUTS + output]
    }

    pub fn set_weight(&mut self, feature: usize, output: usize, v: f64) {
        self.weights[feature * OUTPUTS + output] = v;
    }

    pub fn set_bias(&mut self, output: usize, v: f64) {
        self.bias[output] = v;
    }

    pub fn predict_slice(&self, features: &[f64]) -> Result<OffsetVector> {
        if features.len() != self.feature_dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.feature_dim,
                features.len()
            )));
        }
        Ok(OffsetVector::from_array(self.forward(features)))
    }

    fn forward(&self, features: &[f64]) -> [f64; OUTPUTS] {
        let mut out = self.bias;
        for (x, row) in features.iter().zip(self.weights.chunks_exact(OUTPUTS)) {
            for o in 0..OUTPUTS {
                out[o] += row[o] * x;
            }
        }
        out
    }

    /// Mean smooth-L1 loss over `samples` and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradient(&self, samples: &[Sample], beta: f64) -> Result<(f64, Gradient)> {
        self.check_samples(samples)?;
        let mut grad = Gradient {
            weights: vec![0.0; self.weights.len()],
            bias: [0.0; OUTPUTS],
        };
        let mut loss = 0.0;
        for s in samples {
            loss += self.accumulate(s, beta, &mut grad);
        }
        let scale = 1.0 / samples.len() as f64;
        grad.scale(scale);
        Ok((loss * scale, grad))
    }

    pub fn mean_loss(&self, samples: &[Sample], beta: f64) -> Result<f64> {
        self.check_samples(samples)?;
        let total: f64 = samples
            .iter()
            .map(|s| {
                let pred = OffsetVector::from_array(self.forward(&s.features));
                smooth_l1(&pred, &s.target, beta).0
            })
            .sum();
        Ok(total / samples.len() as f64)
    }

    fn accumulate(&self, s: &Sample, beta: f64, grad: &mut Gradient) -> f64 {
        let pred = OffsetVector::from_array(self.forward(&s.features));
        let (loss, g) = smooth_l1(&pred, &s.target, beta);
        for (x, row) in s
            .features
            .iter()
            .zip(grad.weights.chunks_exact_mut(OUTPUTS))
        {
            for (w, go) in row.iter_mut().zip(g) {
                *w += go * x;
            }
        }
        for (b, go) in grad.bias.iter_mut().zip(g) {
            *b += go;
        }
        loss
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if let Some((i, s)) = samples
            .iter()
            .enumerate()
            .find(|(_, s)| s.features.len() != self.feature_dim)
        {
            return Err(Error::Shape(format!(
                "sample {i} has {} features, model expects {}",
                s.features.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    fn step(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    /// Versioned JSON parameter file.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            magic: MODEL_MAGIC.into(),
            version: MODEL_VERSION,
            feature_dim: self.feature_dim,
            outputs: OUTPUTS,
            weights: self.weights.clone(),
            bias: self.bias.to_vec(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        if file.magic != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!(
                "unexpected magic {:?}",
                file.magic
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported version {}",
                file.version
            )));
        }
        if file.outputs != OUTPUTS {
            return Err(Error::ModelFormat(format!(
                "expected {OUTPUTS} outputs, got {}",
                file.outputs
            )));
        }
        let bias: [f64; OUTPUTS] = file
            .bias
            .try_into()
            .map_err(|_| Error::ModelFormat("bias must have 5 entries".into()))?;
        Self::from_parts(file.feature_dim, file.weights, bias)
            .map_err(|e| Error::ModelFormat(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    feature_dim: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient with the same layout as [`LinearRegressor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: [f64; OUTPUTS],
}

impl Gradient {
    fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|g| *g *= s);
        self.bias.iter_mut().for_each(|g| *g *= s);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: OffsetVector,
}

impl Sample {
    pub fn new(features: Vec<f64>, target: OffsetVector) -> Self {
        Self { features, target }
    }

    pub fn from_pooled(pooled: &PooledFeature, target: OffsetVector) -> Self {
        Self::new(pooled.as_slice().to_vec(), target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub smooth_l1_beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            smooth_l1_beta: 1.0,
        }
    }
}

impl TrainConfig {
    /// A learning rate that keeps full-batch descent monotone on `samples`.
    ///
    /// The mean smooth-L1 objective is convex with a gradient Lipschitz
    /// constant of at most `mean(1 + |x|²) / beta`; any step up to the
    /// reciprocal of that bound never increases the loss.
    pub fn stable_learning_rate(samples: &[Sample], beta: f64) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let mean_sq = samples
            .iter()
            .map(|s| 1.0 + s.features.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            / samples.len() as f64;
        beta / mean_sq
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.smooth_l1_beta > 0.0 && self.smooth_l1_beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smooth-L1 beta must be > 0, got {}",
                self.smooth_l1_beta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearRegressor,
    /// Mean loss over the whole dataset after each epoch.
    pub loss_trace: Vec<f64>,
}

/// Smooth-L1 loss summed over the five components, and its gradient with
/// respect to `pred`.
pub fn smooth_l1(pred: &OffsetVector, target: &OffsetVector, beta: f64) -> (f64, [f64; OUTPUTS]) {
    let (p, t) = (pred.to_array(), target.to_array());
    let mut loss = 0.0;
    let mut grad = [0.0; OUTPUTS];
    for o in 0..OUTPUTS {
        let d = p[o] - t[o];
        if d.abs() < beta {
            loss += 0.5 * d * d / beta;
            grad[o] = d / beta;
        } else {
            loss += d.abs() - 0.5 * beta;
            grad[o] = d.signum();
        }
    }
    (loss, grad)
}

pub fn predict(model: &LinearRegressor, pooled: &PooledFeature) -> Result<OffsetVector> {
    model.predict_slice(pooled.as_slice())
}

/// Trains from all-zero parameters.
pub fn train(dataset: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    let dim = dataset
        .first()
        .map(|s| s.features.len())
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    train_from(LinearRegressor::zeros(dim), dataset, config)
}

/// Mini-batch gradient descent starting from `model`.
///
/// Batches are drawn from a permutation reshuffled every epoch by a ChaCha
/// generator seeded with `config.seed`, so a fixed seed reproduces the same
/// loss trace bit for bit.
pub fn train_from(
    mut model: LinearRegressor,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.check_samples(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: [0.0; OUTPUTS],
    };
    let mut loss_trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.weights.iter_mut().for_each(|g| *g = 0.0);
            grad.bias = [0.0; OUTPUTS];
            for &i in batch {
                model.accumulate(&dataset[i], config.smooth_l1_beta, &mut grad);
            }
            model.step(&grad, config.learning_rate / batch.len() as f64);
        }
        let loss = model.mean_loss(dataset, config.smooth_l1_beta)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        loss_trace.push(loss);
    }
    Ok(TrainOutcome { model, loss_trace })
}
