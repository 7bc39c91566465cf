use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::numerics::{sigmoid, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Silu => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Fully-connected network with a flat parameter vector.
///
/// Layer `l` stores its weight matrix (row-major, `out x in`) followed by its
/// bias. Hidden layers use `activation`; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values needed for the backward pass.
pub struct MlpTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Mlp {
    /// He/Glorot-style normal initialization; the last layer is zeroed when
    /// `zero_last` is set so the network starts as the zero function.
    pub fn new(sizes: &[usize], activation: Activation, zero_last: bool, rng: &mut RngStream) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n_params = Self::count(sizes);
        let mut params = Vec::with_capacity(n_params);
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let last = l + 1 == n_layers;
            let scale = if last && zero_last {
                0.0
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            for _ in 0..fan_in * fan_out {
                params.push(if scale == 0.0 { 0.0 } else { scale * rng.normal() });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    pub fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Offset of layer `l`'s weights; its bias follows at `offset + out*in`.
    pub fn layer_offset(&self, l: usize) -> usize {
        Self::count(&self.sizes[..=l])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.post.pop().unwrap())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace> {
        check_len("mlp input", x.len(), self.input_dim())?;
        let n_layers = self.sizes.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let a: &[f64] = if l == 0 { x } else { &post[l - 1] };
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                *zo += row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            let out = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(out);
            off += fan_in * fan_out + fan_out;
        }
        Ok(MlpTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    pub fn output<'a>(&self, trace: &'a MlpTrace) -> &'a [f64] {
        trace.post.last().unwrap()
    }

    /// Reverse pass: accumulates `d<cot, out>/dparams` into `param_grad` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, trace: &MlpTrace, cot: &[f64], param_grad: &mut [f64]) -> Result<Vec<f64>> {
        check_len("mlp cotangent", cot.len(), self.output_dim())?;
        check_len("mlp param grad", param_grad.len(), self.params.len())?;
        let n_layers = self.sizes.len() - 1;
        let mut delta = cot.to_vec();
        let mut off = self.params.len();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= fan_in * fan_out + fan_out;
            if l + 1 != n_layers {
                for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let a: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let (gw, gb) = param_grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            let w = &self.params[off..off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let grow = &mut gw[o * fan_in..(o + 1) * fan_in];
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    grow[i] += d * a[i];
                    next[i] += d * wrow[i];
                }
            }
            delta = next;
        }
        Ok(delta)
    }
}
