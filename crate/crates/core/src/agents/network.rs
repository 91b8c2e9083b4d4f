//! Small fully connected Q-network with hand-written backprop.
//!
//! Parameters live in one flat vector. Layer `l` stores its weight matrix
//! row-major (`out x in`) followed by its bias.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::replay::Transition;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("input length {got}, network expects {expected}")]
    InputLength { got: usize, expected: usize },
    #[error("parameter vector length {got}, layout needs {expected}")]
    ParamLength { got: usize, expected: usize },
    #[error("need at least an input and an output layer")]
    TooFewLayers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Pre-activations and activations of every layer for one input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input, the last entry the output.
    pub activations: Vec<Vec<f64>>,
    /// Pre-activation of layers 1..; `pre[l]` feeds `activations[l + 1]`.
    pub pre: Vec<Vec<f64>>,
}

pub fn parameter_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self, NetworkError> {
        if sizes.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        let mut params = Vec::with_capacity(parameter_count(sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-limit..=limit));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Ok(QNetwork {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self, NetworkError> {
        if sizes.len() < 2 {
            return Err(NetworkError::TooFewLayers);
        }
        let expected = parameter_count(&sizes);
        if params.len() != expected {
            return Err(NetworkError::ParamLength {
                got: params.len(),
                expected,
            });
        }
        Ok(QNetwork { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_len() {
            return Err(NetworkError::InputLength {
                got: x.len(),
                expected: self.input_len(),
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NetworkError> {
        self.check_input(x)?;
        let layers = self.sizes.len() - 1;
        let mut activations = vec![x.to_vec()];
        let mut pre = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let input = &activations[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let a = if l + 1 < layers {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace { activations, pre })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        Ok(self.forward_trace(x)?.activations.pop().unwrap())
    }

    /// Accumulates `d(output . grad_out)/d(params)` into `grad`.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (d, z) in delta.iter_mut().zip(&trace.pre[l]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let off = offsets[l];
            let input = &trace.activations[l];
            for o in 0..n_out {
                if delta[o] == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += delta[o] * x;
                }
                grad[off + n_in * n_out + o] += delta[o];
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    for (i, n) in next.iter_mut().enumerate() {
                        *n += w[o * n_in + i] * delta[o];
                    }
                }
                delta = next;
            }
        }
    }

    /// Mean squared TD error over `batch` and its gradient in `self`'s
    /// parameters. The target network supplies the bootstrap value.
    pub fn td_loss_and_grad(
        &self,
        target: &QNetwork,
        batch: &[&Transition],
        gamma: f64,
        reward_scale: f64,
    ) -> Result<(f64, Vec<f64>), NetworkError> {
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let n = batch.len().max(1) as f64;
        for t in batch {
            let next_q = target.forward(&t.next_state)?;
            let max_next = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = reward_scale * t.reward + gamma * max_next;
            let trace = self.forward_trace(&t.state)?;
            let q = trace.activations.last().unwrap()[t.action];
            let err = q - y;
            loss += err * err / n;
            let mut grad_out = vec![0.0; self.output_len()];
            grad_out[t.action] = 2.0 * err / n;
            self.backward(&trace, &grad_out, &mut grad);
        }
        Ok((loss, grad))
    }

    /// Loss only, same definition as [`QNetwork::td_loss_and_grad`].
    pub fn td_loss(
        &self,
        target: &QNetwork,
        batch: &[&Transition],
        gamma: f64,
        reward_scale: f64,
    ) -> Result<f64, NetworkError> {
        let n = batch.len().max(1) as f64;
        let mut loss = 0.0;
        for t in batch {
            let next_q = target.forward(&t.next_state)?;
            let max_next = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = reward_scale * t.reward + gamma * max_next;
            let q = self.forward(&t.state)?[t.action];
            loss += (q - y) * (q - y) / n;
        }
        Ok(loss)
    }

    /// ReLU on/off pattern of every hidden unit, for every input in `batch`.
    pub fn activation_pattern(&self, batch: &[&Transition]) -> Result<Vec<bool>, NetworkError> {
        let mut out = Vec::new();
        let layers = self.sizes.len() - 1;
        for t in batch {
            let trace = self.forward_trace(&t.state)?;
            for z in trace.pre.iter().take(layers - 1) {
                out.extend(z.iter().map(|&v| v > 0.0));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
