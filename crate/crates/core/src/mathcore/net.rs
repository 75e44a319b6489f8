//! Fully connected feed-forward networks with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>`; layer `l` stores its weight matrix
//! (`out x in`, row-major) followed by its bias. The flat layout lets the
//! optimizer and EMA work on plain slices.

use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x * sigmoid(x)`
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture of a network: layer widths from input to output. Hidden layers
/// use `hidden`; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    widths: Vec<usize>,
    hidden: Activation,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl NetShape {
    pub fn new(widths: Vec<usize>, hidden: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config("a network needs at least an input and output width"));
        }
        if widths.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(Self { widths, hidden })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = Layer> + '_ {
        let mut off = 0;
        self.widths.windows(2).map(move |w| {
            let layer = Layer {
                w: off,
                b: off + w[0] * w[1],
                fan_in: w[0],
                fan_out: w[1],
            };
            off = layer.b + w[1];
            layer
        })
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for weights
    /// and biases.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut params = vec![0.0; self.num_params()];
        for layer in self.layers() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for p in &mut params[layer.w..layer.b + layer.fan_out] {
                *p = rng.uniform(-bound, bound);
            }
        }
        params
    }

    fn check(&self, params: &[f64], x: &Matrix) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                self.num_params()
            )));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input width {} does not match network input {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, params: &[f64], layer: Layer, h: &Matrix) -> Matrix {
        let n = h.rows();
        let mut z = Matrix::zeros(n, layer.fan_out);
        let bias = &params[layer.b..layer.b + layer.fan_out];
        for r in 0..n {
            z.row_mut(r).copy_from_slice(bias);
        }
        let w = &params[layer.w..layer.b];
        gemm(
            n,
            layer.fan_in,
            layer.fan_out,
            1.0,
            h.as_slice(),
            layer.fan_in as isize,
            1,
            w,
            1,
            layer.fan_in as isize,
            1.0,
            z.as_mut_slice(),
            layer.fan_out as isize,
            1,
        );
        z
    }

    /// Batched forward pass; each row of `x` is one input.
    pub fn forward(&self, params: &[f64], x: &Matrix) -> Result<Matrix> {
        self.check(params, x)?;
        let n_layers = self.widths.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers().enumerate() {
            let mut z = self.affine(params, layer, &h);
            if i + 1 < n_layers {
                for v in z.as_mut_slice() {
                    *v = self.hidden.apply(*v);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps what [`NetShape::backward`] needs.
    pub fn forward_cached(&self, params: &[f64], x: &Matrix) -> Result<ForwardCache> {
        self.check(params, x)?;
        let n_layers = self.widths.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut h = x.clone();
        for (i, layer) in self.layers().enumerate() {
            let z = self.affine(params, layer, &h);
            inputs.push(h);
            if i + 1 < n_layers {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = self.hidden.apply(*v);
                }
                pre.push(z);
                h = a;
            } else {
                h = z;
            }
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: h,
        })
    }

    /// Backpropagates `upstream` (d loss / d output) through the cached pass.
    /// Parameter gradients are ADDED into `grad`; returns d loss / d input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream: &Matrix,
        grad: &mut [f64],
    ) -> Result<Matrix> {
        if grad.len() != self.num_params() {
            return Err(Error::invalid("gradient buffer does not match architecture"));
        }
        if upstream.rows() != cache.output.rows() || upstream.cols() != self.output_dim() {
            return Err(Error::invalid(format!(
                "upstream gradient is {}x{}, output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.output.rows(),
                self.output_dim()
            )));
        }
        let n = upstream.rows();
        let layers: Vec<Layer> = self.layers().collect();
        let mut delta = upstream.clone();
        for (i, layer) in layers.iter().enumerate().rev() {
            if i + 1 < layers.len() {
                let z = &cache.pre[i];
                for (d, &zv) in delta.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *d *= self.hidden.derivative(zv);
                }
            }
            let h = &cache.inputs[i];
            // dW += delta^T * h
            gemm(
                layer.fan_out,
                n,
                layer.fan_in,
                1.0,
                delta.as_slice(),
                1,
                layer.fan_out as isize,
                h.as_slice(),
                layer.fan_in as isize,
                1,
                1.0,
                &mut grad[layer.w..layer.b],
                layer.fan_in as isize,
                1,
            );
            let gb = &mut grad[layer.b..layer.b + layer.fan_out];
            for row in delta.iter_rows() {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            // dh = delta * W
            let mut dh = Matrix::zeros(n, layer.fan_in);
            gemm(
                n,
                layer.fan_out,
                layer.fan_in,
                1.0,
                delta.as_slice(),
                layer.fan_out as isize,
                1,
                &params[layer.w..layer.b],
                layer.fan_in as isize,
                1,
                0.0,
                dh.as_mut_slice(),
                layer.fan_in as isize,
                1,
            );
            delta = dh;
        }
        Ok(delta)
    }
}

/// A network together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForwardNet {
    shape: NetShape,
    params: Vec<f64>,
}

impl FeedForwardNet {
    pub fn new(shape: NetShape, rng: &mut SeededRng) -> Self {
        let params = shape.init_params(rng);
        Self { shape, params }
    }

    pub fn zeros(shape: NetShape) -> Self {
        let params = vec![0.0; shape.num_params()];
        Self { shape, params }
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.num_params() {
            return Err(Error::invalid(format!(
                "{} parameters given for an architecture with {}",
                params.len(),
                shape.num_params()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Sets the bias of layer `index` (0-based).
    pub fn set_bias(&mut self, index: usize, bias: &[f64]) -> Result<()> {
        let layer = self
            .shape
            .layers()
            .nth(index)
            .ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        if bias.len() != layer.fan_out {
            return Err(Error::invalid("bias length does not match layer width"));
        }
        self.params[layer.b..layer.b + layer.fan_out].copy_from_slice(bias);
        Ok(())
    }

    /// Sets the weight matrix (`out x in`, row-major) of layer `index`.
    pub fn set_weights(&mut self, index: usize, weights: &[f64]) -> Result<()> {
        let layer = self
            .shape
            .layers()
            .nth(index)
            .ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        if weights.len() != layer.fan_in * layer.fan_out {
            return Err(Error::invalid("weight count does not match layer shape"));
        }
        self.params[layer.w..layer.b].copy_from_slice(weights);
        Ok(())
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.shape.input_dim() {
            return Err(Error::invalid(format!(
                "input has dim {}, network expects {}",
                input.len(),
                self.shape.input_dim()
            )));
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.shape.forward(&self.params, &x)?.into_vec())
    }

    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        self.shape.forward(&self.params, x)
    }

    /// Gradient of `upstream · forward(input)` with respect to every parameter.
    pub fn gradients(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.shape.input_dim() {
            return Err(Error::invalid("input dim does not match network"));
        }
        if upstream.len() != self.shape.output_dim() {
            return Err(Error::invalid("upstream gradient dim does not match network output"));
        }
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let cache = self.shape.forward_cached(&self.params, &x)?;
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        let mut grad = vec![0.0; self.params.len()];
        self.shape.backward(&self.params, &cache, &up, &mut grad)?;
        Ok(grad)
    }
}
