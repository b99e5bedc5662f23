use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x * sigmoid(x)`
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
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// Shape of every calibrator MLP.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of linear layers, 1 to 3.
    pub layers: usize,
    /// Hidden width as a multiple of the feature dimension.
    pub hidden_mult: f64,
    pub activation: Activation,
    /// Adds the raw feature `x` to the MLP output.
    pub skip: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            layers: 2,
            hidden_mult: 1.0,
            activation: Activation::Silu,
            skip: false,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers) {
            return Err(Error::BadConfig(format!(
                "{} layers, expected 1..=3",
                self.layers
            )));
        }
        if !(self.hidden_mult > 0.0 && self.hidden_mult.is_finite()) {
            return Err(Error::BadConfig(format!(
                "hidden multiplier {}",
                self.hidden_mult
            )));
        }
        Ok(())
    }

    pub fn hidden_width(&self, dim: usize) -> usize {
        ((self.hidden_mult * dim as f64).round() as usize).max(1)
    }
}

/// Fully connected layer `y = W x + b`, `W` stored row-major `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    fn init(inputs: usize, outputs: usize, rng: &mut Prng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weight: (0..inputs * outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// Activations kept from a forward pass for backprop.
#[derive(Debug)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    /// Number of leading input entries added to the output, 0 for none.
    pub skip: usize,
}

impl Mlp {
    pub fn new(inputs: usize, outputs: usize, arch: &Architecture, rng: &mut Prng) -> Self {
        let hidden = arch.hidden_width(outputs);
        let mut widths = vec![inputs];
        widths.extend(std::iter::repeat_n(hidden, arch.layers - 1));
        widths.push(outputs);
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            activation: arch.activation,
            skip: if arch.skip { outputs } else { 0 },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            activation: self.activation,
            skip: self.skip,
        }
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&h);
            inputs.push(std::mem::take(&mut h));
            if i < last {
                h = z.iter().map(|&v| self.activation.apply(v)).collect();
                pre.push(z);
            } else {
                h = z;
            }
        }
        for (o, v) in h.iter_mut().zip(&x[..self.skip]) {
            *o += v;
        }
        (h, MlpCache { inputs, pre })
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the MLP input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                for (gv, &z) in g.iter_mut().zip(&cache.pre[i]) {
                    *gv *= self.activation.derivative(z);
                }
            }
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let gl = &mut grad.layers[i];
            let mut g_in = vec![0.0; layer.inputs];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gl.bias[o] += go;
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gl.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for ((gw, gi), (&w, &x)) in grow
                    .iter_mut()
                    .zip(g_in.iter_mut())
                    .zip(row.iter().zip(input))
                {
                    *gw += go * x;
                    *gi += go * w;
                }
            }
            g = g_in;
        }
        for (gi, go) in g.iter_mut().zip(&grad_out[..self.skip]) {
            *gi += go;
        }
        g
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Layer by layer: weights row-major, then biases.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn write_weight_mask(&self, out: &mut Vec<bool>) {
        for l in &self.layers {
            out.extend(std::iter::repeat_n(true, l.weight.len()));
            out.extend(std::iter::repeat_n(false, l.bias.len()));
        }
    }

    /// Inverse of [`Mlp::write_flat`]; returns the number of values read.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&src[pos..pos + w]);
            l.bias.copy_from_slice(&src[pos + w..pos + w + b]);
            pos += w + b;
        }
        pos
    }
}
