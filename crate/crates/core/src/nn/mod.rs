//! Multilayer perceptron encoder with explicit forward and backward passes.

mod adam;

pub use adam::{adam_step, AdamState, DecaySchedule, OptimizerConfig};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU takes 0 at the kink.
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Linear),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// One affine layer. `weight` is out_dim × in_dim.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn zeros_like(&self) -> Self {
        Layer::zeros(self.out_dim(), self.in_dim())
    }
}

/// Gradients share the parameter layout.
pub type Gradients = Vec<Layer>;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
    /// One entry per hidden layer; the output layer is always affine.
    pub activations: Vec<Activation>,
    pub adam: AdamState,
}

/// Values retained by `forward` for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input fed to each layer (the batch, then post-activations).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pub pre: Vec<Array2<f64>>,
}

/// Uniform init on [-a, a] with a = sqrt(3 / fan_in), so each weight has
/// standard deviation 1 / sqrt(fan_in).
pub fn init_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<ModelParams> {
    init_params_with(layer_dims, Activation::Relu, seed)
}

pub fn init_params_with(
    layer_dims: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<ModelParams> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least 2 layer dims, got {}",
            layer_dims.len()
        )));
    }
    if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "dimension {pos} is zero"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(layer_dims.len() - 1);
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = init_bound(fan_in);
        let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
        let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || dist.sample(&mut rng));
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    let activations = vec![activation; layers.len() - 1];
    let adam = AdamState::zeros_for(&layers);
    Ok(ModelParams {
        layers,
        activations,
        adam,
    })
}

impl ModelParams {
    pub fn from_layers(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        if activations.len() != layers.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "{} layers need {} activations, got {}",
                layers.len(),
                layers.len() - 1,
                activations.len()
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() || l.in_dim() == 0 || l.out_dim() == 0 {
                return Err(Error::InvalidArchitecture(format!("layer {i} has bad shape")));
            }
        }
        let adam = AdamState::zeros_for(&layers);
        Ok(ModelParams {
            layers,
            activations,
            adam,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(Layer::out_dim));
        d
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.layers.iter().map(Layer::zeros_like).collect()
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::zeros_for(&self.layers);
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Contract(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if batch.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite value in batch".into()));
        }
        Ok(())
    }
}

fn affine(layer: &Layer, x: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.dot(&layer.weight.t());
    out += &layer.bias;
    out
}

pub fn forward(params: &ModelParams, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    params.check_input(batch)?;
    let n = params.layers.len();
    let mut inputs = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n - 1);
    let mut current = batch.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, &current.view());
        inputs.push(current);
        if i + 1 < n {
            let act = params.activations[i];
            current = z.mapv(|v| act.apply(v));
            pre.push(z);
        } else {
            current = z;
        }
    }
    if current.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("forward pass produced non-finite embeddings".into()));
    }
    Ok((current, ForwardCache { inputs, pre }))
}

/// Forward pass without keeping intermediates.
pub fn embed(params: &ModelParams, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
    params.check_input(batch)?;
    let n = params.layers.len();
    let mut current = batch.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, &current.view());
        current = if i + 1 < n {
            let act = params.activations[i];
            z.mapv_into(|v| act.apply(v))
        } else {
            z
        };
    }
    if current.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("forward pass produced non-finite embeddings".into()));
    }
    Ok(current)
}

pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    output_grad: ArrayView2<f64>,
) -> Result<Gradients> {
    let n = params.layers.len();
    if cache.inputs.len() != n || cache.pre.len() + 1 != n {
        return Err(Error::Contract("cache does not match network depth".into()));
    }
    let batch = cache.inputs[0].nrows();
    if output_grad.dim() != (batch, params.output_dim()) {
        return Err(Error::Contract(format!(
            "output gradient is {:?}, expected ({}, {})",
            output_grad.dim(),
            batch,
            params.output_dim()
        )));
    }
    for (i, (input, layer)) in cache.inputs.iter().zip(&params.layers).enumerate() {
        if input.ncols() != layer.in_dim() || input.nrows() != batch {
            return Err(Error::Contract(format!("cached input {i} has wrong shape")));
        }
    }
    let mut grads: Vec<Layer> = Vec::with_capacity(n);
    let mut g = output_grad.to_owned();
    for l in (0..n).rev() {
        let weight = g.t().dot(&cache.inputs[l]);
        let bias = g.sum_axis(Axis(0));
        if l > 0 {
            let mut upstream = g.dot(&params.layers[l].weight);
            let act = params.activations[l - 1];
            upstream.zip_mut_with(&cache.pre[l - 1], |u, &p| *u *= act.derivative(p));
            g = upstream;
        }
        grads.push(Layer { weight, bias });
    }
    grads.reverse();
    Ok(grads)
}
