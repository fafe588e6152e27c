//! SGD training with momentum, and accuracy evaluation.
//!
//! The update is the classic heavy-ball form: `v <- momentum * v - lr * g`
//! then `p <- p + v`. Epoch shuffles derive from the config seed via the
//! crate-wide fan-out, so a whole run is reproducible from one number.

use serde::{Deserialize, Serialize};

use super::{Gradients, Layer, Model, ParamGrads};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::Tensor;

/// Hyper-parameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Momentum coefficient, in `[0, 1)`.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seed for epoch shuffles. Inside the pruning loop this is overridden
    /// per round by the seed fan-out.
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss/accuracy record for one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's optimisation steps.
    pub mean_loss: f64,
    /// Accuracy over the full training set at the end of the epoch.
    pub train_accuracy: f64,
}

/// Momentum buffers, aligned with the model's layers.
#[derive(Debug, Clone)]
pub struct Velocity {
    per_layer: Vec<Option<ParamGrads>>,
}

impl Velocity {
    /// All-zero buffers shaped like the model's parameters.
    pub fn zeros_like(model: &Model) -> Velocity {
        let per_layer = model
            .layers()
            .iter()
            .map(|layer| match layer {
                Layer::Conv2d { filters, bias, .. } => Some(ParamGrads {
                    weights: Tensor::zeros(filters.shape()),
                    bias: Tensor::zeros(bias.shape()),
                }),
                Layer::Dense { weights, bias } => Some(ParamGrads {
                    weights: Tensor::zeros(weights.shape()),
                    bias: Tensor::zeros(bias.shape()),
                }),
                _ => None,
            })
            .collect();
        Velocity { per_layer }
    }
}

/// One in-place momentum-SGD update.
pub fn sgd_step(
    model: &mut Model,
    grads: &Gradients,
    velocity: &mut Velocity,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    let n = model.layers().len();
    if grads.per_layer.len() != n || velocity.per_layer.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: grads.per_layer.len().min(velocity.per_layer.len()),
        });
    }
    for (li, layer) in model.layers_mut().iter_mut().enumerate() {
        let (Some(g), Some(v)) = (&grads.per_layer[li], &mut velocity.per_layer[li]) else {
            continue;
        };
        let (weights, bias) = match layer {
            Layer::Conv2d { filters, bias, .. } => (filters, bias),
            Layer::Dense { weights, bias } => (weights, bias),
            _ => continue,
        };
        for (param, grad, vel) in [
            (weights, &g.weights, &mut v.weights),
            (bias, &g.bias, &mut v.bias),
        ] {
            if param.shape() != grad.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: param.shape().to_vec(),
                    right: grad.shape().to_vec(),
                });
            }
            let (pd, gd, vd) = (param.data_mut(), grad.data(), vel.data_mut());
            for i in 0..pd.len() {
                vd[i] = config.momentum * vd[i] - config.learning_rate * gd[i];
                pd[i] += vd[i];
            }
        }
    }
    Ok(())
}

/// Trains for `config.epochs` epochs and returns the updated model plus one
/// [`EpochStats`] per epoch. With `epochs == 0` the model passes through
/// bit-for-bit unchanged.
pub fn train(model: Model, data: &Dataset, config: &TrainConfig) -> Result<(Model, Vec<EpochStats>)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = model;
    let mut velocity = Velocity::zeros_like(&model);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let shuffle_seed = seeds::subseed(config.seed, epoch as u64);
        let mut loss_sum = 0.0;
        for (images, labels) in data::batches(data, config.batch_size, shuffle_seed) {
            let (loss, grads) = model.backward(&images, &labels)?;
            loss_sum += loss * labels.len() as f64;
            sgd_step(&mut model, &grads, &mut velocity, config)?;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: evaluate(&model, data)?,
        });
    }
    Ok((model, history))
}

/// Fraction of samples whose arg-max logit matches the label. Ties go to
/// the lowest class index, so the result is deterministic.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        let (images, labels) = data.batch(chunk)?;
        let logits = model.forward(&images)?;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
