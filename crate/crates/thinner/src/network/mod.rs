//! Layers, models, and the forward/backward passes.
//!
//! A [`Model`] is a straight-line stack of layers. Construction validates
//! that every layer can consume its predecessor's output shape, so a `Model`
//! that exists is always runnable. Parameters live in plain [`Tensor`]s;
//! gradients come back in a [`Gradients`] structure aligned with the layer
//! list.
//!
//! Convention: `forward` returns logits. The final
//! [`Layer::SoftmaxOutput`] layer is the loss head — identity on the way
//! forward, softmax + cross-entropy when computing loss and gradients.

mod serialize;
mod train;

pub(crate) use serialize::write_atomic;
pub use serialize::{load_model, save_model};
pub use train::{evaluate, sgd_step, train, EpochStats, TrainConfig, Velocity};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{col2im, conv_output_dims, im2col, Tensor};

// --- layers -----------------------------------------------------------------

/// One layer of a model, with its parameters inline.
///
/// `Conv2d` filters are `(c_out, c_in, kh, kw)`; `Dense` weights are
/// `(n_in, n_out)` so output unit `j` is column `j`. Biases are rank-1.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        filters: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool2d {
        size: usize,
    },
    Flatten,
    /// Loss head: identity in `forward`, softmax + cross-entropy in
    /// `loss`/`backward`. Must be the last layer if present.
    SoftmaxOutput,
}

/// Layer kind without parameters (naming, serialization, dispatch).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Dense,
    Relu,
    MaxPool2d,
    Flatten,
    SoftmaxOutput,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::Flatten => LayerKind::Flatten,
            Layer::SoftmaxOutput => LayerKind::SoftmaxOutput,
        }
    }

    /// True for layers that carry weights (Conv2d, Dense).
    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Conv2d { .. } | Layer::Dense { .. })
    }

    /// Number of output neurons: channels for conv, units for dense.
    pub fn width(&self) -> Option<usize> {
        match self {
            Layer::Conv2d { filters, .. } => Some(filters.shape()[0]),
            Layer::Dense { weights, .. } => Some(weights.shape()[1]),
            _ => None,
        }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d { filters, bias, .. } => filters.len() + bias.len(),
            Layer::Dense { weights, bias } => weights.len() + bias.len(),
            _ => 0,
        }
    }
}

/// Architecture description for one layer — what [`init_model`] builds
/// parameters for. Serialisable so configs can spell out a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        /// Square kernel edge length.
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
    },
    Flatten,
    SoftmaxOutput,
}

fn default_stride() -> usize {
    1
}

// --- shapes -----------------------------------------------------------------

/// Shape of the activation flowing between layers (per sample, without the
/// batch dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Channels x height x width.
    Chw(usize, usize, usize),
    /// Flat vector of `n` features.
    Flat(usize),
}

impl Shape {
    pub fn elements(&self) -> usize {
        match *self {
            Shape::Chw(c, h, w) => c * h * w,
            Shape::Flat(n) => n,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Shape::Chw(c, h, w) => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// Output shape of `layer` given its input shape, or why it cannot compose.
fn layer_output_shape(layer: &Layer, input: Shape) -> std::result::Result<Shape, String> {
    match layer {
        Layer::Conv2d {
            filters,
            stride,
            padding,
            ..
        } => {
            let (co, ci, kh, kw) = (
                filters.shape()[0],
                filters.shape()[1],
                filters.shape()[2],
                filters.shape()[3],
            );
            let Shape::Chw(c, h, w) = input else {
                return Err(format!("conv needs a CxHxW input, got flat {input}"));
            };
            if c != ci {
                return Err(format!("conv expects {ci} input channels, got {c}"));
            }
            match conv_output_dims(h, w, kh, kw, *stride, *padding) {
                Ok((oh, ow)) => Ok(Shape::Chw(co, oh, ow)),
                Err(e) => Err(e.to_string()),
            }
        }
        Layer::Dense { weights, .. } => {
            let n_in = weights.shape()[0];
            let Shape::Flat(n) = input else {
                return Err(format!("dense needs a flat input, got {input}"));
            };
            if n != n_in {
                return Err(format!("dense expects {n_in} inputs, got {n}"));
            }
            Ok(Shape::Flat(weights.shape()[1]))
        }
        Layer::Relu => Ok(input),
        Layer::MaxPool2d { size } => {
            let Shape::Chw(c, h, w) = input else {
                return Err(format!("max-pool needs a CxHxW input, got flat {input}"));
            };
            if *size == 0 || h / *size == 0 || w / *size == 0 {
                return Err(format!("pool size {size} too large for {h}x{w} input"));
            }
            Ok(Shape::Chw(c, h / size, w / size))
        }
        Layer::Flatten => {
            let Shape::Chw(c, h, w) = input else {
                return Err(format!("flatten needs a CxHxW input, got flat {input}"));
            };
            Ok(Shape::Flat(c * h * w))
        }
        Layer::SoftmaxOutput => {
            let Shape::Flat(n) = input else {
                return Err(format!("softmax output needs a flat input, got {input}"));
            };
            Ok(Shape::Flat(n))
        }
    }
}

// --- model ------------------------------------------------------------------

/// A validated stack of layers plus the list of prunable layer indices.
///
/// Invariants enforced at construction:
/// * every layer composes with its predecessor's output shape,
/// * a `SoftmaxOutput` layer, if present, is unique and last,
/// * prunable indices are sorted, unique, refer to parameterized layers,
///   and never include the final parameterized layer (removing its units
///   would change the output dimension).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    prunable: Vec<usize>,
    input_shape: [usize; 3],
}

impl Model {
    pub fn new(layers: Vec<Layer>, prunable: Vec<usize>, input_shape: [usize; 3]) -> Result<Self> {
        let model = Model {
            layers,
            prunable,
            input_shape,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        // Shape walk doubles as the composition check.
        self.layer_shapes()?;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kind() == LayerKind::SoftmaxOutput && i + 1 != self.layers.len() {
                return Err(Error::NonComposable {
                    layer: i,
                    reason: "softmax output must be the last layer".into(),
                });
            }
        }
        let last_param = self.last_parameterized();
        let mut prev = None;
        for &p in &self.prunable {
            if prev.is_some_and(|q| q >= p) {
                return Err(Error::Config(format!(
                    "prunable layer list must be strictly increasing, got {:?}",
                    self.prunable
                )));
            }
            prev = Some(p);
            match self.layers.get(p) {
                None => {
                    return Err(Error::InvalidNeuron {
                        layer: p,
                        index: 0,
                        reason: "prunable index out of range",
                    })
                }
                Some(l) if !l.is_parameterized() => {
                    return Err(Error::InvalidNeuron {
                        layer: p,
                        index: 0,
                        reason: "prunable layer carries no neurons",
                    })
                }
                _ => {}
            }
            if Some(p) == last_param {
                return Err(Error::InvalidNeuron {
                    layer: p,
                    index: 0,
                    reason: "the final parameterized layer fixes the output size and cannot be pruned",
                });
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access to layer parameters (optimiser steps, gradient
    /// checks). Callers must not change any tensor's shape.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn prunable(&self) -> &[usize] {
        &self.prunable
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    /// Index of the last layer that carries weights.
    pub fn last_parameterized(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.is_parameterized())
    }

    /// Output shape of every layer, in order.
    pub fn layer_shapes(&self) -> Result<Vec<Shape>> {
        let [c, h, w] = self.input_shape;
        let mut shape = Shape::Chw(c, h, w);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer_output_shape(layer, shape).map_err(|reason| Error::NonComposable {
                layer: i,
                reason,
            })?;
            out.push(shape);
        }
        Ok(out)
    }

    /// `(layer index, width)` for every prunable layer.
    pub fn prunable_widths(&self) -> Vec<(usize, usize)> {
        self.prunable
            .iter()
            .map(|&p| (p, self.layers[p].width().expect("validated prunable layer")))
            .collect()
    }

    /// Total neurons across prunable layers.
    pub fn total_prunable(&self) -> usize {
        self.prunable_widths().iter().map(|&(_, w)| w).sum()
    }

    /// Total scalar parameter count of the whole model.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Human-readable per-layer names: `conv1`, `pool1`, `fc1`, ... numbered
    /// per kind in order of appearance.
    pub fn layer_display_names(&self) -> Vec<String> {
        let (mut conv, mut dense, mut pool, mut relu) = (0, 0, 0, 0);
        self.layers
            .iter()
            .map(|l| match l.kind() {
                LayerKind::Conv2d => {
                    conv += 1;
                    format!("conv{conv}")
                }
                LayerKind::Dense => {
                    dense += 1;
                    format!("fc{dense}")
                }
                LayerKind::MaxPool2d => {
                    pool += 1;
                    format!("pool{pool}")
                }
                LayerKind::Relu => {
                    relu += 1;
                    format!("relu{relu}")
                }
                LayerKind::Flatten => "flatten".into(),
                LayerKind::SoftmaxOutput => "softmax".into(),
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let expected: Vec<usize> = self.input_shape.to_vec();
        if batch.rank() != 4 || batch.shape()[1..] != expected[..] {
            return Err(Error::InputShape {
                expected,
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs the batch through every layer; returns logits `(b, classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run_forward(batch)?.pop().expect("at least one layer"))
    }

    /// Like [`Model::forward`] but also returns each prunable layer's raw
    /// output (pre-activation, since ReLU is a separate layer).
    pub fn forward_recording(&self, batch: &Tensor) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
        let mut outs = self.run_forward(batch)?;
        let recorded = self
            .prunable
            .iter()
            .map(|&p| (p, outs[p].clone()))
            .collect();
        Ok((outs.pop().expect("at least one layer"), recorded))
    }

    /// Forward pass keeping every intermediate output.
    fn run_forward(&self, batch: &Tensor) -> Result<Vec<Tensor>> {
        self.check_batch(batch)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().unwrap_or(batch);
            let out = layer_forward(layer, input)?;
            outs.push(out);
        }
        Ok(outs)
    }

    /// Mean softmax cross-entropy loss of the batch. Requires the model to
    /// end in a `SoftmaxOutput` layer.
    pub fn loss(&self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        self.require_loss_head()?;
        check_labels(batch, labels)?;
        let logits = self.forward(batch)?;
        let (loss, _) = softmax_cross_entropy(&logits, labels)?;
        Ok(loss)
    }

    /// Mean loss and the gradient of every parameter tensor.
    pub fn backward(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.require_loss_head()?;
        check_labels(batch, labels)?;
        let outs = self.run_forward(batch)?;
        let n = self.layers.len();
        let (loss, mut upstream) = softmax_cross_entropy(&outs[n - 1], labels)?;
        let mut per_layer: Vec<Option<ParamGrads>> = (0..n).map(|_| None).collect();
        // Softmax head already consumed; walk the remaining layers backwards.
        for i in (0..n - 1).rev() {
            let input = if i == 0 { batch } else { &outs[i - 1] };
            let (down, grads) = layer_backward(&self.layers[i], input, upstream)?;
            upstream = down;
            per_layer[i] = grads;
        }
        Ok((loss, Gradients { per_layer }))
    }

    fn require_loss_head(&self) -> Result<()> {
        match self.layers.last() {
            Some(Layer::SoftmaxOutput) => Ok(()),
            _ => Err(Error::Unsupported(
                "loss and gradients need a softmax output layer at the end of the model".into(),
            )),
        }
    }
}

fn check_labels(batch: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.len() != batch.shape()[0] {
        return Err(Error::CountMismatch {
            images: batch.shape()[0],
            labels: labels.len(),
        });
    }
    Ok(())
}

// --- per-layer forward ------------------------------------------------------

fn layer_forward(layer: &Layer, input: &Tensor) -> Result<Tensor> {
    match layer {
        Layer::Conv2d {
            filters,
            bias,
            stride,
            padding,
        } => conv_forward_batch(input, filters, bias, *stride, *padding),
        Layer::Dense { weights, bias } => {
            let mut out = input.matmul(weights)?;
            let n_out = weights.shape()[1];
            for row in out.data_mut().chunks_mut(n_out) {
                for (v, b) in row.iter_mut().zip(bias.data()) {
                    *v += b;
                }
            }
            Ok(out)
        }
        Layer::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Ok(out)
        }
        Layer::MaxPool2d { size } => maxpool_forward(input, *size),
        Layer::Flatten => {
            let s = input.shape();
            if input.rank() != 4 {
                return Err(Error::RankMismatch {
                    op: "flatten",
                    expected: 4,
                    got: s.to_vec(),
                });
            }
            input.reshape(&[s[0], s[1] * s[2] * s[3]])
        }
        // Loss head is identity on the way forward; see `Model::loss`.
        Layer::SoftmaxOutput => Ok(input.clone()),
    }
}

fn conv_forward_batch(
    input: &Tensor,
    filters: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (b, _c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, ci, kh, kw) = (
        filters.shape()[0],
        filters.shape()[1],
        filters.shape()[2],
        filters.shape()[3],
    );
    let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding)?;
    let patches = im2col(input, kh, kw, stride, padding)?; // (b*oh*ow, ci*kh*kw)
    let bank = filters.reshape(&[co, ci * kh * kw])?;
    let out_mat = patches.matmul(&bank.transpose()?)?; // (b*oh*ow, co)
    // Regather (row, oc) -> (b, oc, oy, ox) and add bias.
    let mut out = Tensor::zeros(&[b, co, oh, ow]);
    let area = oh * ow;
    let out_data = out.data_mut();
    for bi in 0..b {
        for pos in 0..area {
            let src = &out_mat.data()[(bi * area + pos) * co..(bi * area + pos + 1) * co];
            for (oc, &v) in src.iter().enumerate() {
                out_data[(bi * co + oc) * area + pos] = v + bias.data()[oc];
            }
        }
    }
    Ok(out)
}

fn maxpool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    if input.rank() != 4 {
        return Err(Error::RankMismatch {
            op: "max_pool2d",
            expected: 4,
            got: input.shape().to_vec(),
        });
    }
    let (b, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (h / size, w / size);
    if oh == 0 || ow == 0 {
        return Err(Error::NonComposable {
            layer: 0,
            reason: format!("pool size {size} too large for {h}x{w} input"),
        });
    }
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let out_data = out.data_mut();
    for bc in 0..b * c {
        let plane = &input.data()[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..size {
                    for kx in 0..size {
                        let v = plane[(oy * size + ky) * w + (ox * size + kx)];
                        if v > best {
                            best = v;
                        }
                    }
                }
                out_data[bc * oh * ow + oy * ow + ox] = best;
            }
        }
    }
    Ok(out)
}

// --- gradients --------------------------------------------------------------

/// Gradient (or velocity) tensors for one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Per-layer gradients aligned with `Model::layers()`; `None` for layers
/// without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub per_layer: Vec<Option<ParamGrads>>,
}

/// Mean cross-entropy of softmax(logits) against integer labels, plus the
/// gradient at the logits. Uses the max-shift for numerical stability;
/// gradients are already divided by the batch size.
fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 {
        return Err(Error::RankMismatch {
            op: "softmax_cross_entropy",
            expected: 2,
            got: logits.shape().to_vec(),
        });
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = Tensor::zeros(&[b, k]);
    let gdata = grad.data_mut();
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &z in row {
            sum += (z - max).exp();
        }
        loss -= row[label] - max - sum.ln();
        for j in 0..k {
            let p = (row[j] - max).exp() / sum;
            gdata[i * k + j] = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

/// Backward through one layer: upstream gradient in, input gradient out,
/// plus parameter gradients where the layer has any.
fn layer_backward(
    layer: &Layer,
    input: &Tensor,
    upstream: Tensor,
) -> Result<(Tensor, Option<ParamGrads>)> {
    match layer {
        Layer::Dense { weights, .. } => {
            let gw = input.transpose()?.matmul(&upstream)?;
            let gb = upstream.scale(upstream.shape()[0] as f64).mean_axis(0)?;
            let gx = upstream.matmul(&weights.transpose()?)?;
            Ok((gx, Some(ParamGrads { weights: gw, bias: gb })))
        }
        Layer::Relu => {
            let mut gx = upstream;
            for (g, &x) in gx.data_mut().iter_mut().zip(input.data()) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            Ok((gx, None))
        }
        Layer::Flatten => Ok((upstream.reshape(input.shape())?, None)),
        Layer::MaxPool2d { size } => Ok((maxpool_backward(input, &upstream, *size)?, None)),
        Layer::Conv2d {
            filters,
            stride,
            padding,
            ..
        } => conv_backward(input, filters, &upstream, *stride, *padding),
        Layer::SoftmaxOutput => Ok((upstream, None)),
    }
}

fn maxpool_backward(input: &Tensor, upstream: &Tensor, size: usize) -> Result<Tensor> {
    let (b, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oh, ow) = (h / size, w / size);
    let mut gx = Tensor::zeros(input.shape());
    let gx_data = gx.data_mut();
    for bc in 0..b * c {
        let plane = &input.data()[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                // First maximum in scan order gets the whole gradient.
                let (mut best, mut best_at) = (f64::NEG_INFINITY, 0);
                for ky in 0..size {
                    for kx in 0..size {
                        let at = (oy * size + ky) * w + (ox * size + kx);
                        if plane[at] > best {
                            best = plane[at];
                            best_at = at;
                        }
                    }
                }
                gx_data[bc * h * w + best_at] += upstream.data()[bc * oh * ow + oy * ow + ox];
            }
        }
    }
    Ok(gx)
}

fn conv_backward(
    input: &Tensor,
    filters: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Option<ParamGrads>)> {
    let (b, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (co, ci, kh, kw) = (
        filters.shape()[0],
        filters.shape()[1],
        filters.shape()[2],
        filters.shape()[3],
    );
    let (oh, ow) = conv_output_dims(h, w, kh, kw, stride, padding)?;
    let area = oh * ow;
    // Reorder upstream (b, co, oy, ox) into the patch-matrix layout
    // (b*oh*ow, co) that pairs with im2col rows.
    let mut gmat = Tensor::zeros(&[b * area, co]);
    let gdata = gmat.data_mut();
    for bi in 0..b {
        for oc in 0..co {
            let src = &upstream.data()[(bi * co + oc) * area..(bi * co + oc + 1) * area];
            for (pos, &v) in src.iter().enumerate() {
                gdata[(bi * area + pos) * co + oc] = v;
            }
        }
    }
    let patches = im2col(input, kh, kw, stride, padding)?;
    let gw = gmat.transpose()?.matmul(&patches)?.reshape(&[co, ci, kh, kw])?;
    let gb = gmat.scale((b * area) as f64).mean_axis(0)?;
    let bank = filters.reshape(&[co, ci * kh * kw])?;
    let gcols = gmat.matmul(&bank)?;
    let gx = col2im(&gcols, b, c, h, w, kh, kw, stride, padding)?;
    Ok((gx, Some(ParamGrads { weights: gw, bias: gb })))
}

// --- initialisation ---------------------------------------------------------

/// Builds a model from an architecture description with He-initialised
/// weights (`N(0, sqrt(2 / fan_in))`) and zero biases, all drawn from a
/// ChaCha stream seeded with `seed`. Prunable layers default to every
/// parameterized layer except the last.
pub fn init_model(specs: &[LayerSpec], input_shape: [usize; 3], seed: u64) -> Result<Model> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let [c0, h0, w0] = input_shape;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(Error::Config(format!(
            "input shape dimensions must be >= 1, got {input_shape:?}"
        )));
    }
    let mut shape = Shape::Chw(c0, h0, w0);
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let layer = match *spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: conv out_channels, kernel and stride must be >= 1"
                    )));
                }
                let Shape::Chw(ci, _, _) = shape else {
                    return Err(Error::NonComposable {
                        layer: i,
                        reason: format!("conv needs a CxHxW input, got flat {shape}"),
                    });
                };
                let fan_in = ci * kernel * kernel;
                let filters = he_tensor(&[out_channels, ci, kernel, kernel], fan_in, &mut rng);
                Layer::Conv2d {
                    filters,
                    bias: Tensor::zeros(&[out_channels]),
                    stride,
                    padding,
                }
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::Config(format!("layer {i}: dense units must be >= 1")));
                }
                let Shape::Flat(n_in) = shape else {
                    return Err(Error::NonComposable {
                        layer: i,
                        reason: format!("dense needs a flat input, got {shape}"),
                    });
                };
                Layer::Dense {
                    weights: he_tensor(&[n_in, units], n_in, &mut rng),
                    bias: Tensor::zeros(&[units]),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2d { size } => {
                if size == 0 {
                    return Err(Error::Config(format!("layer {i}: pool size must be >= 1")));
                }
                Layer::MaxPool2d { size }
            }
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::SoftmaxOutput => Layer::SoftmaxOutput,
        };
        shape = layer_output_shape(&layer, shape).map_err(|reason| Error::NonComposable {
            layer: i,
            reason,
        })?;
        layers.push(layer);
    }
    let param_indices: Vec<usize> = layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_parameterized())
        .map(|(i, _)| i)
        .collect();
    let prunable = match param_indices.split_last() {
        Some((_, rest)) => rest.to_vec(),
        None => Vec::new(),
    };
    Model::new(layers, prunable, input_shape)
}

fn he_tensor(shape: &[usize], fan_in: usize, rng: &mut ChaCha20Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape, data).expect("shape/product consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small conv net used across the module tests: 1x6x6 input,
    /// conv(2 ch, 3x3, pad 1) -> relu -> pool 2 -> flatten -> dense 4 ->
    /// relu -> dense 3 -> softmax.
    fn tiny_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4 },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 3 },
            LayerSpec::SoftmaxOutput,
        ]
    }

    fn tiny_model(seed: u64) -> Model {
        init_model(&tiny_specs(), [1, 6, 6], seed).unwrap()
    }

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn shape_walk_matches_hand_calculation() {
        let model = tiny_model(0);
        let shapes = model.layer_shapes().unwrap();
        assert_eq!(shapes[0], Shape::Chw(2, 6, 6)); // conv, pad 1 keeps 6x6
        assert_eq!(shapes[2], Shape::Chw(2, 3, 3)); // pool 2
        assert_eq!(shapes[3], Shape::Flat(18)); // flatten
        assert_eq!(shapes[4], Shape::Flat(4)); // dense
        assert_eq!(shapes[7], Shape::Flat(3)); // softmax head
    }

    #[test]
    fn default_prunable_excludes_final_dense() {
        let model = tiny_model(0);
        assert_eq!(model.prunable(), &[0, 4]);
        assert_eq!(model.total_prunable(), 6);
    }

    #[test]
    fn non_composable_layer_is_reported_with_its_index() {
        // Dense directly on an image input (no flatten) cannot compose.
        let specs = vec![LayerSpec::Dense { units: 3 }];
        match init_model(&specs, [1, 4, 4], 0) {
            Err(Error::NonComposable { layer: 0, reason }) => {
                assert!(reason.contains("flat"), "{reason}");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn prunable_must_be_parameterized_and_not_last() {
        let model = tiny_model(0);
        let layers = model.layers().to_vec();
        // Layer 1 is a ReLU.
        assert!(Model::new(layers.clone(), vec![1], [1, 6, 6]).is_err());
        // Layer 6 is the final dense layer.
        assert!(Model::new(layers.clone(), vec![6], [1, 6, 6]).is_err());
        // Unsorted lists are rejected.
        assert!(Model::new(layers, vec![4, 0], [1, 6, 6]).is_err());
    }

    #[test]
    fn identity_dense_maps_input_to_logits_unchanged() {
        let n = 5;
        let mut eye = Tensor::zeros(&[n, n]);
        for i in 0..n {
            eye.data_mut()[i * n + i] = 1.0;
        }
        let model = Model::new(
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weights: eye,
                    bias: Tensor::zeros(&[n]),
                },
            ],
            vec![],
            [1, 1, n],
        )
        .unwrap();
        let v = Tensor::new(&[1, 1, 1, n], vec![0.5, -1.0, 2.0, 0.0, 3.5]).unwrap();
        let logits = model.forward(&v).unwrap();
        assert_eq!(logits.shape(), &[1, n]);
        assert_eq!(logits.data(), v.data());
    }

    #[test]
    fn forward_rejects_wrong_batch_shape() {
        let model = tiny_model(0);
        let bad = Tensor::zeros(&[2, 1, 5, 5]);
        assert!(matches!(
            model.forward(&bad),
            Err(Error::InputShape { .. })
        ));
    }

    #[test]
    fn relu_clamps_negatives_only() {
        let out = layer_forward(
            &Layer::Relu,
            &Tensor::new(&[1, 4], vec![-1.0, 0.0, 2.0, -0.5]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let input = Tensor::new(
            &[1, 1, 4, 4],
            vec![
                1.0, 2.0, 5.0, 0.0, //
                3.0, 4.0, 1.0, 1.0, //
                0.0, 0.0, 9.0, 8.0, //
                7.0, 0.0, 8.0, 9.0,
            ],
        )
        .unwrap();
        let out = maxpool_forward(&input, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[4.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn maxpool_drops_trailing_rows_when_not_divisible() {
        let input = random_batch(&[1, 1, 5, 5], 3);
        let out = maxpool_forward(&input, 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        assert_eq!(tiny_model(42), tiny_model(42));
        assert_ne!(tiny_model(42), tiny_model(43));
    }

    #[test]
    fn he_init_std_tracks_fan_in() {
        // 200 inputs -> std should be near sqrt(2/200); 20k samples keep the
        // estimate within a few percent.
        let specs = vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 100 },
            LayerSpec::SoftmaxOutput,
        ];
        let model = init_model(&specs, [1, 1, 200], 9).unwrap();
        let Layer::Dense { weights, bias } = &model.layers()[1] else {
            panic!("expected dense layer");
        };
        let n = weights.len() as f64;
        let mean: f64 = weights.data().iter().sum::<f64>() / n;
        let var: f64 = weights.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = (2.0f64 / 200.0).sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.05);
        assert!(bias.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn softmax_loss_hand_case() {
        // Uniform logits over 2 classes: loss = ln 2, grads (p - y)/b.
        let logits = Tensor::zeros(&[1, 2]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!((loss - (2.0f64).ln()).abs() < 1e-12);
        assert!((grad.data()[0] - (-0.5)).abs() < 1e-12);
        assert!((grad.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_loss_is_shift_invariant() {
        let a = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[1, 3], vec![1001.0, 1002.0, 1003.0]).unwrap();
        let (la, _) = softmax_cross_entropy(&a, &[2]).unwrap();
        let (lb, _) = softmax_cross_entropy(&b, &[2]).unwrap();
        assert!((la - lb).abs() < 1e-9);
        assert!(la.is_finite());
    }

    #[test]
    fn labels_out_of_range_are_rejected() {
        let model = tiny_model(0);
        let batch = random_batch(&[2, 1, 6, 6], 1);
        assert!(matches!(
            model.backward(&batch, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(matches!(
            model.backward(&batch, &[0]),
            Err(Error::CountMismatch { .. })
        ));
    }

    #[test]
    fn loss_needs_a_softmax_head() {
        let model = Model::new(
            vec![
                Layer::Flatten,
                Layer::Dense {
                    weights: Tensor::zeros(&[4, 2]),
                    bias: Tensor::zeros(&[2]),
                },
            ],
            vec![],
            [1, 2, 2],
        )
        .unwrap();
        let batch = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            model.loss(&batch, &[0]),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn forward_recording_returns_prunable_outputs() {
        let model = tiny_model(5);
        let batch = random_batch(&[3, 1, 6, 6], 7);
        let (logits, recorded) = model.forward_recording(&batch).unwrap();
        assert_eq!(logits.shape(), &[3, 3]);
        assert_eq!(recorded.len(), 2);
        assert_eq!(recorded[0].0, 0);
        assert_eq!(recorded[0].1.shape(), &[3, 2, 6, 6]);
        assert_eq!(recorded[1].0, 4);
        assert_eq!(recorded[1].1.shape(), &[3, 4]);
        // Conv output is pre-activation: negatives must still be present
        // with overwhelming probability on random inputs.
        assert!(recorded[0].1.data().iter().any(|&v| v < 0.0));
    }

    /// Central-difference gradient check over every parameter of the tiny
    /// model. Larger-scale checks live in the integration suite.
    #[test]
    fn backward_matches_finite_differences() {
        let model = tiny_model(1234);
        let batch = random_batch(&[3, 1, 6, 6], 99);
        let labels = [0usize, 2, 1];
        let (_, grads) = model.backward(&batch, &labels).unwrap();
        let eps = 1e-5;
        let mut checked = 0;
        for li in 0..model.layers().len() {
            let Some(pg) = &grads.per_layer[li] else { continue };
            for which in 0..2 {
                let n = if which == 0 { pg.weights.len() } else { pg.bias.len() };
                for pi in 0..n {
                    let mut plus = model.clone();
                    let mut minus = model.clone();
                    for (m, delta) in [(&mut plus, eps), (&mut minus, -eps)] {
                        let t = match (&mut m.layers_mut()[li], which) {
                            (Layer::Conv2d { filters, .. }, 0) => filters,
                            (Layer::Conv2d { bias, .. }, _) => bias,
                            (Layer::Dense { weights, .. }, 0) => weights,
                            (Layer::Dense { bias, .. }, _) => bias,
                            _ => unreachable!(),
                        };
                        t.data_mut()[pi] += delta;
                    }
                    let numeric = (plus.loss(&batch, &labels).unwrap()
                        - minus.loss(&batch, &labels).unwrap())
                        / (2.0 * eps);
                    let analytic = if which == 0 {
                        pg.weights.data()[pi]
                    } else {
                        pg.bias.data()[pi]
                    };
                    let tol = 1e-4 * numeric.abs().max(analytic.abs()).max(1.0);
                    assert!(
                        (numeric - analytic).abs() <= tol,
                        "layer {li} param {pi}: numeric {numeric} vs analytic {analytic}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 100, "expected to probe many parameters, got {checked}");
    }

    #[test]
    fn display_names_follow_kind_counters() {
        let model = tiny_model(0);
        assert_eq!(
            model.layer_display_names(),
            vec!["conv1", "relu1", "pool1", "flatten", "fc1", "relu2", "fc2", "softmax"]
        );
    }
}
