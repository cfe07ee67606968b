//! Dense multilayer perceptron with hand-written backprop.
//!
//! Inputs are binary and sparse (the one-hot state encoding), so the first
//! layer takes the list of active input indices instead of a dense vector.
//! Weights are stored `inputs x outputs` row-major: row `i` holds the
//! outgoing weights of input `i`, which turns both the sparse first layer
//! and the backward pass into contiguous row operations.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    inputs: usize,
    outputs: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: alloc::vec![0.0; inputs * outputs],
            bias: alloc::vec![0.0; outputs],
        }
    }

    fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let scale = libm::sqrt(1.0 / inputs as f64);
        let weight = (0..inputs * outputs)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: alloc::vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.weight[i * self.outputs..(i + 1) * self.outputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    active: Vec<usize>,
    /// Pre-activations of every layer; the last entry is the output.
    pre: Vec<Vec<f64>>,
    /// Post-activations of the hidden layers.
    post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-z))
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

impl Mlp {
    /// `sizes = [inputs, hidden.., outputs]`, all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Scaled-normal weights, zero biases. With `zero_output` the last layer
    /// starts at zero so the network initially outputs exactly zero.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], zero_output: bool, rng: &mut R) -> Self {
        let n = sizes.len().saturating_sub(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                if zero_output && k + 1 == n {
                    Dense::zeros(w[0], w[1])
                } else {
                    Dense::random(w[0], w[1], rng)
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn forward(&self, active: &[usize]) -> Tape {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len().saturating_sub(1));
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.bias.clone();
            if k == 0 {
                for &i in active {
                    for (zj, wij) in z.iter_mut().zip(layer.row(i)) {
                        *zj += wij;
                    }
                }
            } else {
                for (i, &x) in post[k - 1].iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    for (zj, wij) in z.iter_mut().zip(layer.row(i)) {
                        *zj += x * wij;
                    }
                }
            }
            if k + 1 < self.layers.len() {
                post.push(z.iter().map(|&v| silu(v)).collect());
            }
            pre.push(z);
        }
        Tape {
            active: active.to_vec(),
            pre,
            post,
        }
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, d_output: &[f64], grads: &mut Mlp) {
        let mut dz: Vec<f64> = d_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            for (gb, d) in g.bias.iter_mut().zip(&dz) {
                *gb += d;
            }
            if k == 0 {
                for &i in &tape.active {
                    let row = &mut g.weight[i * layer.outputs..(i + 1) * layer.outputs];
                    for (gw, d) in row.iter_mut().zip(&dz) {
                        *gw += d;
                    }
                }
                break;
            }
            let x = &tape.post[k - 1];
            let mut dx = alloc::vec![0.0; layer.inputs];
            for (i, &xi) in x.iter().enumerate() {
                let row = &mut g.weight[i * layer.outputs..(i + 1) * layer.outputs];
                let w = layer.row(i);
                let mut acc = 0.0;
                for j in 0..layer.outputs {
                    row[j] += xi * dz[j];
                    acc += w[j] * dz[j];
                }
                dx[i] = acc;
            }
            let pre = &tape.pre[k - 1];
            dz = dx.iter().zip(pre).map(|(d, &z)| d * silu_grad(z)).collect();
        }
    }

    /// Flat views of every tensor: `weight, bias` per layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// `(inputs, outputs)` of each weight followed by `(1, outputs)` of its bias.
    pub fn shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layers.iter().flat_map(|l| [(l.inputs, l.outputs), (1, l.outputs)])
    }
}
