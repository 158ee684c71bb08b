//! Feed-forward approximators with explicit reverse-mode passes.
//!
//! Parameters live in one flat vector, layer by layer: a row-major
//! `out x in` weight block followed by `out` biases. Hidden layers use the
//! logistic sigmoid followed by inverted dropout; the output layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN_UNITS: usize = 128;
pub const DROPOUT_RATE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Fresh dropout mask per call.
    Train,
    /// No dropout; deterministic given the weights.
    Eval,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Approximator {
    sizes: Vec<usize>,
    params: Vec<f64>,
    dropout_rate: f64,
    rng: ChaCha8Rng,
}

/// Cached activations of one forward pass, consumed by the backward passes.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    /// Sigmoid outputs of each hidden layer, before dropout.
    sigmoid: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)) per hidden layer, if any.
    masks: Vec<Option<Vec<f64>>>,
    /// Post-dropout hidden activations.
    hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Approximator {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], dropout_rate: f64, seed: u64) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "bad layer sizes {sizes:?}");
        assert!((0.0..1.0).contains(&dropout_rate), "dropout rate must be in [0, 1)");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::count(sizes);
        let mut params = Vec::with_capacity(n);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Approximator {
            sizes: sizes.to_vec(),
            params,
            dropout_rate,
            rng,
        }
    }

    /// `input -> 128 -> 128 -> output`.
    pub fn standard(input: usize, output: usize, dropout_rate: f64, seed: u64) -> Self {
        Self::new(&[input, HIDDEN_UNITS, HIDDEN_UNITS, output], dropout_rate, seed)
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    fn run(&self, input: &[f64], rng: Option<&mut ChaCha8Rng>) -> Trace {
        let n_layers = self.sizes.len() - 1;
        let mut rng = rng;
        let mut trace = Trace {
            input: input.to_vec(),
            sigmoid: Vec::with_capacity(n_layers - 1),
            masks: Vec::with_capacity(n_layers - 1),
            hidden: Vec::with_capacity(n_layers - 1),
            output: Vec::new(),
        };
        let keep = 1.0 - self.dropout_rate;
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let x = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = w
                .chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l + 1 == n_layers {
                trace.output = z;
                break;
            }
            let s: Vec<f64> = z.into_iter().map(sigmoid).collect();
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout_rate > 0.0 => Some(
                    (0..n_out)
                        .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect::<Vec<f64>>(),
                ),
                _ => None,
            };
            let h = match &mask {
                Some(m) => s.iter().zip(m).map(|(a, k)| a * k).collect(),
                None => s.clone(),
            };
            trace.sigmoid.push(s);
            trace.masks.push(mask);
            trace.hidden.push(h);
        }
        trace
    }

    pub fn forward(&mut self, input: &[f64], mode: Mode) -> Result<Trace> {
        self.check_input(input)?;
        Ok(match mode {
            Mode::Eval => self.run(input, None),
            Mode::Train => {
                let mut rng = self.rng.clone();
                let t = self.run(input, Some(&mut rng));
                self.rng = rng;
                t
            }
        })
    }

    /// Evaluation-mode forward pass.
    pub fn trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        Ok(self.run(input, None))
    }

    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.trace(input).map(|t| t.output)
    }

    fn check_trace(&self, trace: &Trace, upstream: &[f64]) -> Result<()> {
        let hidden_ok = trace.sigmoid.len() == self.sizes.len() - 2
            && trace
                .sigmoid
                .iter()
                .zip(&self.sizes[1..])
                .all(|(s, n)| s.len() == *n);
        if trace.input.len() != self.input_dim() || !hidden_ok {
            return Err(Error::contract("forward trace does not belong to this network"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "upstream gradient has {} entries, network has {} outputs",
                upstream.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Shared reverse sweep. Returns the gradient with respect to the input and,
    /// when `param_grads` is given, writes parameter gradients into it.
    fn backward(&self, trace: &Trace, upstream: &[f64], mut param_grads: Option<&mut [f64]>) -> Vec<f64> {
        let layers: Vec<_> = self.layers().collect();
        let mut dz = upstream.to_vec();
        for (l, &(off, n_in, n_out)) in layers.iter().enumerate().rev() {
            let x = if l == 0 { &trace.input } else { &trace.hidden[l - 1] };
            let w = &self.params[off..off + n_in * n_out];
            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (o, d) in dz.iter().enumerate() {
                    for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                        *gwi = d * xi;
                    }
                    gb[o] = *d;
                }
            }
            let mut dx = vec![0.0; n_in];
            for (row, d) in w.chunks_exact(n_in).zip(&dz) {
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += wi * d;
                }
            }
            if l > 0 {
                let s = &trace.sigmoid[l - 1];
                let mask = trace.masks[l - 1].as_deref();
                for i in 0..n_in {
                    let keep = mask.map_or(1.0, |m| m[i]);
                    dx[i] *= keep * s[i] * (1.0 - s[i]);
                }
            }
            dz = dx;
        }
        dz
    }

    /// Gradient of `upstream . output` with respect to every parameter, using
    /// the dropout mask recorded in `trace`.
    pub fn grad_params(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_trace(trace, upstream)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward(trace, upstream, Some(&mut grads));
        Ok(grads)
    }

    /// Gradient of `upstream . output` with respect to the input.
    pub fn input_gradient(&self, trace: &Trace, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_trace(trace, upstream)?;
        Ok(self.backward(trace, upstream, None))
    }

    /// Gradient of a scalar-output network with respect to its input, in eval mode.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.value_and_grad_input(input).map(|(_, g)| g)
    }

    pub fn value_and_grad_input(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.output_dim() != 1 {
            return Err(Error::contract("input gradient requires a scalar-output network"));
        }
        let trace = self.trace(input)?;
        let g = self.backward(&trace, &[1.0], None);
        Ok((trace.output[0], g))
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &Approximator, tau: f64) -> Result<()> {
        if source.sizes != self.sizes {
            return Err(Error::contract("soft update between networks of different shapes"));
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
        Ok(())
    }

    /// Euclidean distance between the parameter vectors of two same-shaped networks.
    pub fn param_distance(&self, other: &Approximator) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Replaces the dropout stream, e.g. to decorrelate a cloned target network.
    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Copy with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.params.iter_mut().for_each(|p| *p = 0.0);
        z
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam state sized for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
