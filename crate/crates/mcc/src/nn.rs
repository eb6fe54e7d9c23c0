//! Small multilayer perceptrons: initialization, forward passes (plain and
//! tape-recorded), SGD with momentum, and JSON checkpoints.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Matrix, NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// No nonlinearity; used for output layers that produce logits.
    Linear,
}

/// Shape and nonlinearity of one fully connected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in_dim x out_dim`, multiplied on the right of a batch of rows.
    pub weight: Matrix,
    /// `1 x out_dim`, broadcast over the batch.
    pub bias: Matrix,
    pub activation: Activation,
}

/// A stack of fully connected layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

/// Tape locations of one model's parameters for the current forward pass.
#[derive(Debug, Clone)]
pub struct TapedParams {
    pub layers: Vec<TapedLayer>,
}

#[derive(Debug, Clone, Copy)]
pub struct TapedLayer {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl ModelParams {
    /// Initializes weights uniformly in `±sqrt(6 / (in_dim + out_dim))`
    /// (Glorot) and biases to zero. Weight entries are drawn row-major,
    /// layer by layer, so a given generator state fixes the model exactly.
    pub fn init(specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.in_dim == 0 || spec.out_dim == 0 {
                return Err(Error::Parameter {
                    name: "layer_spec",
                    message: format!("zero-sized layer {}x{}", spec.in_dim, spec.out_dim),
                });
            }
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let weight = Matrix::from_fn(spec.in_dim, spec.out_dim, |_, _| {
                rng.random_range(-limit..limit)
            });
            layers.push(Layer {
                weight,
                bias: Matrix::zeros(1, spec.out_dim),
                activation: spec.activation,
            });
        }
        Ok(ModelParams { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data().len() + l.bias.data().len())
            .sum()
    }

    /// Records all parameters as tape leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> TapedParams {
        let layers = self
            .layers
            .iter()
            .map(|l| TapedLayer {
                weight: tape.leaf(l.weight.clone()),
                bias: tape.leaf(l.bias.clone()),
            })
            .collect();
        TapedParams { layers }
    }

    /// Tape-recorded forward pass over a batch of input rows.
    pub fn forward(&self, tape: &mut Tape, input: NodeId, taped: &TapedParams) -> Result<NodeId> {
        let mut h = input;
        for (layer, ids) in self.layers.iter().zip(&taped.layers) {
            let lin = tape.matmul(h, ids.weight)?;
            let biased = tape.add_row_vec(lin, ids.bias)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(biased),
                Activation::Tanh => tape.tanh(biased),
                Activation::Linear => biased,
            };
        }
        Ok(h)
    }

    /// Forward pass without recording; used for evaluation.
    pub fn forward_plain(&self, input: &Matrix) -> Result<Matrix> {
        let mut h = input.clone();
        for layer in &self.layers {
            let lin = h.matmul(&layer.weight)?;
            let biased =
                Matrix::from_fn(lin.rows(), lin.cols(), |i, j| lin.get(i, j) + layer.bias.get(0, j));
            h = match layer.activation {
                Activation::Relu => biased.map(|v| v.max(0.0)),
                Activation::Tanh => biased.map(f64::tanh),
                Activation::Linear => biased,
            };
        }
        Ok(h)
    }
}

/// Momentum buffers for one model, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct OptState {
    velocity: Vec<(Matrix, Matrix)>,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let velocity = params
            .layers
            .iter()
            .map(|l| {
                (
                    Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    Matrix::zeros(1, l.bias.cols()),
                )
            })
            .collect();
        OptState { velocity }
    }
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + g` followed by `theta <- theta - lr * v`.
///
/// Gradients are read from the tape positions in `taped`, so the same call
/// works no matter which loss produced the backward pass.
pub fn sgd_step(
    params: &mut ModelParams,
    taped: &TapedParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    state: &mut OptState,
) -> Result<()> {
    if params.layers.len() != taped.layers.len() || params.layers.len() != state.velocity.len() {
        return Err(Error::Contract(
            "parameters, tape ids and optimizer state must have matching layer counts".into(),
        ));
    }
    for ((layer, ids), (vw, vb)) in params
        .layers
        .iter_mut()
        .zip(&taped.layers)
        .zip(&mut state.velocity)
    {
        let gw = &grads[ids.weight];
        let gb = &grads[ids.bias];
        if !gw.is_finite() || !gb.is_finite() {
            return Err(Error::NonFinite("gradient update".into()));
        }
        *vw = vw.scale(momentum).add(gw)?;
        *vb = vb.scale(momentum).add(gb)?;
        layer.weight = layer.weight.sub(&vw.scale(lr))?;
        layer.bias = layer.bias.sub(&vb.scale(lr))?;
    }
    Ok(())
}
