//! Fully-connected and LSTM layers expressed on top of [`Graph`] ops.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::init;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct DenseNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: init::glorot_uniform(&[input, output], input, output, rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph<T>) -> DenseNodes {
        DenseNodes {
            weight: g.parameter(self.weight.clone()),
            bias: g.parameter(self.bias.clone()),
        }
    }
}

impl DenseNodes {
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId) -> Result<NodeId> {
        let xw = g.vecmat(x, self.weight)?;
        g.add(xw, self.bias)
    }
}

/// Single-layer LSTM parameters. Gates are packed along the last axis in
/// the order input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    /// `D × 4U`
    pub input_kernel: Tensor<T>,
    /// `U × 4U`
    pub recurrent_kernel: Tensor<T>,
    /// `4U`
    pub bias: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub input_kernel: NodeId,
    pub recurrent_kernel: NodeId,
    pub bias: NodeId,
    pub units: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        Self {
            input_kernel: Tensor::zeros(&[input_dim, 4 * units]),
            recurrent_kernel: Tensor::zeros(&[units, 4 * units]),
            bias: Tensor::zeros(&[4 * units]),
        }
    }

    /// Glorot-uniform input kernel, orthogonal recurrent kernel, zero bias
    /// except a forget-gate bias of one.
    pub fn init<R: Rng>(input_dim: usize, units: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(&[4 * units]);
        bias.data_mut()[units..2 * units].fill(T::one());
        Self {
            input_kernel: init::glorot_uniform(&[input_dim, 4 * units], input_dim, 4 * units, rng),
            recurrent_kernel: init::orthogonal(units, 4 * units, rng),
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_kernel.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.recurrent_kernel.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph<T>) -> LstmNodes {
        LstmNodes {
            input_kernel: g.parameter(self.input_kernel.clone()),
            recurrent_kernel: g.parameter(self.recurrent_kernel.clone()),
            bias: g.parameter(self.bias.clone()),
            units: self.units(),
        }
    }
}

/// One LSTM recurrence:
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell_step<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    params: &LstmNodes,
) -> Result<(NodeId, NodeId)> {
    let u = params.units;
    for (id, what) in [(h_prev, "hidden state"), (c_prev, "cell state")] {
        if g.value(id).shape() != [u] {
            return Err(Error::Shape(format!(
                "lstm {what} has shape {:?}, expected [{u}]",
                g.value(id).shape()
            )));
        }
    }
    let zx = g.vecmat(x, params.input_kernel)?;
    let zh = g.vecmat(h_prev, params.recurrent_kernel)?;
    let z = g.add(zx, zh)?;
    let z = g.add(z, params.bias)?;

    let zi = g.slice(z, 0, u)?;
    let zf = g.slice(z, u, u)?;
    let zg = g.slice(z, 2 * u, u)?;
    let zo = g.slice(z, 3 * u, u)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let squashed = g.tanh(c);
    let h = g.mul(o, squashed)?;
    Ok((h, c))
}

/// Runs the LSTM over `inputs` from a zero state and returns the final
/// hidden state.
pub fn lstm_final_hidden<T: Scalar>(
    g: &mut Graph<T>,
    inputs: &[NodeId],
    params: &LstmNodes,
) -> Result<NodeId> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("lstm over an empty sequence".into()));
    }
    let mut h = g.constant(Tensor::zeros(&[params.units]));
    let mut c = g.constant(Tensor::zeros(&[params.units]));
    for &x in inputs {
        (h, c) = lstm_cell_step(g, x, h, c, params)?;
    }
    Ok(h)
}
