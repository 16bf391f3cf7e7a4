//! Multilayer softmax classifier with ReLU hidden layers and hand-written
//! backpropagation to both parameters and inputs.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::{self, argmax, LossSpec};
use crate::rng;
use crate::tensor::Matrix;

/// One dense layer. `weights` is `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros_like(&self) -> Layer {
        Layer {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Analytic number of trainable values for the layer widths `dims`.
pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    dims: Vec<usize>,
    layers: Vec<Layer>,
    seed: u64,
}

impl ClassifierModel {
    /// He-uniform weights and zero biases drawn from `seed`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = rng::rng_for(seed, "init");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            seed,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("a model needs at least one layer"))?;
        let mut dims = vec![first.weights.cols()];
        for (i, layer) in layers.iter().enumerate() {
            if layer.weights.cols() != *dims.last().unwrap() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but the previous layer emits {}",
                    layer.weights.cols(),
                    dims.last().unwrap()
                )));
            }
            if layer.bias.len() != layer.weights.rows() {
                return Err(Error::shape(format!("layer {i} bias length mismatch")));
            }
            dims.push(layer.weights.rows());
        }
        validate_dims(&dims)?;
        Ok(Self { dims, layers, seed })
    }

    /// Rebuilds a model from the flat parameter order of [`Self::flat_params`].
    pub fn from_flat(dims: &[usize], params: &[f64], seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        if params.len() != param_count(dims) {
            return Err(Error::shape(format!(
                "{} parameters for dims {dims:?} (expected {})",
                params.len(),
                param_count(dims)
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let n = w[0] * w[1];
            let weights = Matrix::from_vec(w[1], w[0], params[offset..offset + n].to_vec())?;
            offset += n;
            let bias = params[offset..offset + w[1]].to_vec();
            offset += w[1];
            layers.push(Layer { weights, bias });
        }
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            seed,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.dims)
    }

    /// Per layer: weights row-major, then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Rounds every parameter to the nearest `f32`, matching what a
    /// checkpoint stores.
    pub fn round_to_f32(&self) -> Self {
        let params: Vec<f64> = self
            .flat_params()
            .into_iter()
            .map(|v| v as f32 as f64)
            .collect();
        Self::from_flat(&self.dims, &params, self.seed).expect("same shape")
    }

    /// SHA-256 over the layer widths and the exact parameter bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.dims {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.flat_params() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() && !(x.rows() == 0 && x.cols() == 0) {
            return Err(Error::shape(format!(
                "model expects {} input features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Ok(Matrix::zeros(0, self.class_count()));
        }
        Ok(self.forward_cached(x).pop().unwrap())
    }

    /// Argmax of the logits, lowest class on ties.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward_logits(x)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// Inputs, hidden activations, then logits.
    fn forward_cached(&self, x: &Matrix) -> Vec<Matrix> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].affine(&layer.weights, &layer.bias);
            if i < last {
                z.map_inplace(|v| if v > 0.0 { v } else { 0.0 });
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates `dlogits`, returning parameter gradients (when asked)
    /// and the input gradient.
    fn backward(
        &self,
        acts: &[Matrix],
        dlogits: Matrix,
        want_params: bool,
    ) -> (Option<Vec<Layer>>, Matrix) {
        let mut grads: Vec<Layer> = if want_params {
            self.layers.iter().map(Layer::zeros_like).collect()
        } else {
            Vec::new()
        };
        let mut delta = dlogits;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            if want_params {
                grads[i].weights = delta.transpose_matmul(&acts[i]);
                grads[i].bias = delta.column_sums();
            }
            let mut prev = delta.matmul(&layer.weights);
            if i > 0 {
                // ReLU: subgradient 0 at the kink
                for (g, a) in prev.as_mut_slice().iter_mut().zip(acts[i].as_slice()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = prev;
        }
        (want_params.then_some(grads), delta)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config("layer widths need an input and an output"));
    }
    if dims.contains(&0) {
        return Err(Error::config(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

fn prepare(model: &ClassifierModel, x: &Matrix, labels: &[usize]) -> Result<()> {
    model.check_input(x)?;
    loss::check_labels(labels, x.rows(), model.class_count())?;
    if x.rows() == 0 {
        return Err(Error::input("gradient of an empty batch"));
    }
    Ok(())
}

/// Loss value and its gradient with respect to every input entry.
pub fn input_gradient(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<(f64, Matrix)> {
    prepare(model, x, labels)?;
    let acts = model.forward_cached(x);
    let (value, dlogits) = loss::loss_and_logit_grad(acts.last().unwrap(), labels, spec)?;
    let (_, dx) = model.backward(&acts, dlogits, false);
    Ok((value, dx))
}

/// Loss value and its gradient with respect to every parameter.
pub fn param_gradient(
    model: &ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<(f64, Gradients)> {
    prepare(model, x, labels)?;
    let acts = model.forward_cached(x);
    let (value, dlogits) = loss::loss_and_logit_grad(acts.last().unwrap(), labels, spec)?;
    let (grads, _) = model.backward(&acts, dlogits, true);
    Ok((
        value,
        Gradients {
            layers: grads.unwrap(),
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 32,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be nonnegative"));
        }
        Ok(())
    }
}

/// Trains a fresh model of widths `dims` on `(x, labels)`.
pub fn train_classifier(
    x: &Matrix,
    labels: &[usize],
    dims: &[usize],
    cfg: &TrainConfig,
) -> Result<ClassifierModel> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::input("cannot train on an empty dataset"));
    }
    let mut model = ClassifierModel::init(dims, cfg.seed)?;
    sgd_epochs(&mut model, x, labels, cfg, 1.0)?;
    Ok(model)
}

/// Mini-batch SGD with momentum on `sign * CE`, in place. Returns the mean
/// batch loss of every epoch (unsigned CE).
///
/// `sign = -1` turns this into gradient ascent.
pub(crate) fn sgd_epochs(
    model: &mut ClassifierModel,
    x: &Matrix,
    labels: &[usize],
    cfg: &TrainConfig,
    sign: f64,
) -> Result<Vec<f64>> {
    model.check_input(x)?;
    loss::check_labels(labels, x.rows(), model.class_count())?;
    let n = x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = rng::rng_for(cfg.seed, "shuffle");
    let mut velocity: Vec<Layer> = model.layers.iter().map(Layer::zeros_like).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (value, grads) = param_gradient(model, &xb, &yb, &LossSpec::CrossEntropy)?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    iteration: history.len(),
                    last_finite: model.flat_params(),
                });
            }
            epoch_loss += value;
            batches += 1;
            for ((layer, grad), vel) in model
                .layers
                .iter_mut()
                .zip(&grads.layers)
                .zip(velocity.iter_mut())
            {
                momentum_step(
                    layer.weights.as_mut_slice(),
                    grad.weights.as_slice(),
                    vel.weights.as_mut_slice(),
                    cfg,
                    sign,
                );
                momentum_step(&mut layer.bias, &grad.bias, &mut vel.bias, cfg, sign);
            }
        }
        history.push(epoch_loss / batches.max(1) as f64);
    }
    Ok(history)
}

fn momentum_step(params: &mut [f64], grad: &[f64], vel: &mut [f64], cfg: &TrainConfig, sign: f64) {
    for ((p, g), v) in params.iter_mut().zip(grad).zip(vel.iter_mut()) {
        let g = sign * g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g;
        *p -= cfg.learning_rate * *v;
    }
}
