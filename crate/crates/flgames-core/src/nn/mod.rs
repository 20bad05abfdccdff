//! Dense neural-network kernel: parameters, forward/backward passes, the
//! cross-entropy loss, and optimizers. Everything is `f64` and every
//! operation is a pure function of its explicit inputs, so values can be
//! freely handed between threads.

mod matrix;
pub mod optim;

pub use matrix::Matrix;
pub use optim::{adam_step, sgd_step, AdamHyper, OptimState};

use std::borrow::Cow;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-layer activation. Hidden layers use ELU, the classification layer is
/// left linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

/// ELU with unit scale: `x` for `x >= 0`, `exp(x) - 1` otherwise.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Derivative of [`elu`] evaluated at the pre-activation.
pub fn elu_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// A dense layer `y = act(W x + b)` with `W` stored row-major `out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Weights and biases of one dense network: a classifier head, the shared
/// representation, or an averaged ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Seeded initialization: weights uniform in `(-1, 1) / sqrt(in_dim)`,
    /// biases zero. Hidden layers get ELU, the final layer is linear.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        Self::init_with_final(layer_dims, seed, Activation::Identity)
    }

    /// As [`MlpParams::init`] but with an explicit final-layer activation
    /// (representation networks keep ELU on their last layer).
    pub fn init_with_final(
        layer_dims: &[usize],
        seed: u64,
        final_activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 layer dims, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Uniform::new(-1.0f64, 1.0f64);
        let mut layers = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let scale = 1.0 / (in_dim as f64).sqrt();
            let data = (0..out_dim * in_dim)
                .map(|_| unit.sample(&mut rng) * scale)
                .collect();
            layers.push(Layer {
                weights: Matrix::from_vec(out_dim, in_dim, data)?,
                bias: vec![0.0; out_dim],
                activation: Activation::Elu,
            });
        }
        layers.last_mut().unwrap().activation = final_activation;
        Ok(Self { layers })
    }

    /// Same shapes and activations, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![0.0; l.out_dim()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// `[in, hidden.., out]` dimension chain.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape(format!(
                "layer count {} vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (i, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.in_dim() != b.in_dim() || a.out_dim() != b.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {}: {}x{} vs {}x{}",
                    i,
                    a.out_dim(),
                    a.in_dim(),
                    b.out_dim(),
                    b.in_dim()
                )));
            }
        }
        Ok(())
    }

    /// `self += scale * other`, elementwise over every weight and bias.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_scaled(&b.weights, scale)?;
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.scale(factor);
            for b in &mut l.bias {
                *b *= factor;
            }
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (&x, &y) in a.weights.data().iter().zip(b.weights.data()) {
                worst = worst.max((x - y).abs());
            }
            for (&x, &y) in a.bias.iter().zip(&b.bias) {
                worst = worst.max((x - y).abs());
            }
        }
        worst
    }
}

/// A minibatch of flattened inputs plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<u8>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Intermediate activations kept by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer (post-activation of the previous one).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation `W x + b` of each layer.
    pre_activations: Vec<Matrix>,
}

/// Forward pass returning logits plus the cache needed by [`backward`].
pub fn forward(params: &MlpParams, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if inputs.cols() != params.in_dim() {
        return Err(Error::Shape(format!(
            "input dim {} vs network in_dim {}",
            inputs.cols(),
            params.in_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut x = inputs.clone();
    for layer in &params.layers {
        let mut z = x.matmul_nt(&layer.weights);
        for r in 0..z.rows() {
            for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        let a = match layer.activation {
            Activation::Identity => z.clone(),
            Activation::Elu => {
                let mut a = z.clone();
                for v in a.data_mut() {
                    *v = elu(*v);
                }
                a
            }
        };
        layer_inputs.push(x);
        pre_activations.push(z);
        x = a;
    }
    Ok((
        x,
        ForwardCache {
            layer_inputs,
            pre_activations,
        },
    ))
}

/// Forward pass without a cache, for evaluation.
pub fn forward_logits(params: &MlpParams, inputs: &Matrix) -> Result<Matrix> {
    forward(params, inputs).map(|(logits, _)| logits)
}

/// Mean softmax cross-entropy over the batch, stabilized by max-subtraction,
/// together with the exact logit gradient `(softmax - onehot) / batch_size`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[u8]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let classes = logits.cols();
    let batch = logits.rows();
    let inv_batch = 1.0 / batch as f64;
    let mut dlogits = Matrix::zeros(batch, classes);
    let mut loss_sum = 0.0;
    for r in 0..batch {
        let label = labels[r] as usize;
        if label >= classes {
            return Err(Error::Label(format!(
                "label {} out of range for {} classes",
                label, classes
            )));
        }
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for &v in row {
            sum_exp += (v - max).exp();
        }
        let log_sum = sum_exp.ln();
        loss_sum += log_sum - (row[label] - max);
        let out = dlogits.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            let softmax = (v - max).exp() / sum_exp;
            out[c] = (softmax - if c == label { 1.0 } else { 0.0 }) * inv_batch;
        }
    }
    Ok((loss_sum * inv_batch, dlogits))
}

/// Fraction of rows whose argmax logit equals the label. Ties go to the
/// lowest class index.
pub fn accuracy(logits: &Matrix, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut correct = 0usize;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == labels[r] as usize {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Exact backward pass. Returns gradients shaped like the parameters plus
/// the gradient with respect to the network input (needed when chaining
/// through a representation network).
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    dlogits: &Matrix,
) -> Result<(MlpParams, Matrix)> {
    let n_layers = params.layers.len();
    if cache.layer_inputs.len() != n_layers || cache.pre_activations.len() != n_layers {
        return Err(Error::Shape("cache does not match network depth".into()));
    }
    let mut grads = params.zeros_like();
    let mut d_post = dlogits.clone();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let z = &cache.pre_activations[l];
        let x = &cache.layer_inputs[l];
        if d_post.rows() != z.rows()
            || d_post.cols() != z.cols()
            || x.cols() != layer.in_dim()
            || x.rows() != z.rows()
        {
            return Err(Error::Shape(format!(
                "stale cache at layer {}: got {}x{} grad for {}x{} pre-activation",
                l,
                d_post.rows(),
                d_post.cols(),
                z.rows(),
                z.cols()
            )));
        }
        let dz = match layer.activation {
            Activation::Identity => d_post,
            Activation::Elu => {
                let mut dz = d_post;
                for (g, &pre) in dz.data_mut().iter_mut().zip(z.data()) {
                    *g *= elu_deriv(pre);
                }
                dz
            }
        };
        grads.layers[l].weights = dz.matmul_tn(x);
        let db = &mut grads.layers[l].bias;
        for r in 0..dz.rows() {
            for (b, &g) in db.iter_mut().zip(dz.row(r)) {
                *b += g;
            }
        }
        d_post = dz.matmul_nn(&layer.weights);
    }
    Ok((grads, d_post))
}

/// The shared representation: either the identity map or a trainable
/// network applied to raw inputs before every predictor.
#[derive(Debug, Clone)]
pub enum Representation {
    Identity,
    Mlp(MlpParams),
}

impl Representation {
    pub fn is_identity(&self) -> bool {
        matches!(self, Representation::Identity)
    }

    /// Feature dimension seen by predictors for the given raw input width.
    pub fn feature_dim(&self, input_dim: usize) -> usize {
        match self {
            Representation::Identity => input_dim,
            Representation::Mlp(p) => p.out_dim(),
        }
    }

    /// Maps raw inputs to predictor features without keeping a cache.
    pub fn features<'a>(&self, inputs: &'a Matrix) -> Result<Cow<'a, Matrix>> {
        match self {
            Representation::Identity => Ok(Cow::Borrowed(inputs)),
            Representation::Mlp(p) => Ok(Cow::Owned(forward_logits(p, inputs)?)),
        }
    }
}

pub mod gradcheck;
