//! Dense ReLU networks with exact backpropagation.
//!
//! Parameters live in one flat vector, laid out layer by layer as
//! `[W (out × in, row-major), b (out)]`. Gradients use the same layout, so
//! optimizers and finite-difference checks can treat a network as a plain
//! parameter vector. The network returns raw pre-activations of its last
//! layer; squashing (tanh for actions, sigmoid for the classifier) is applied
//! by the owner.

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-sample activations kept from the forward pass for backprop.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    /// `layers[0]` is the input, `layers[i]` the post-ReLU output of hidden
    /// layer `i`, and the last entry the raw output.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Hidden pre-activations are not stored; a hidden unit is active iff its
    /// post-ReLU value is positive.
    pub fn hidden(&self) -> &[Vec<f64>] {
        let n = self.layers.len();
        if n < 2 {
            &[]
        } else {
            &self.layers[1..n - 1]
        }
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::EmptyLayers);
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let n = fan_in * fan_out + fan_out;
            for p in &mut net.params[offset..offset + n] {
                *p = dist.sample(rng);
            }
            offset += n;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let expected = param_count(sizes);
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::EmptyLayers);
        }
        if params.len() != expected {
            return Err(Error::dims("parameter vector", expected, params.len()));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Yields `(weight_range, bias_range, fan_in, fan_out)` per layer.
    fn layout(&self) -> impl Iterator<Item = (std::ops::Range<usize>, std::ops::Range<usize>, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let (fi, fo) = (w[0], w[1]);
            let wr = offset..offset + fi * fo;
            let br = wr.end..wr.end + fo;
            offset = br.end;
            (wr, br, fi, fo)
        })
    }

    /// Mask over the flat parameter vector that is `true` for weights and
    /// `false` for biases.
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for (wr, _, _, _) in self.layout() {
            mask[wr].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// `Σ W²` over all weight matrices (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layout()
            .map(|(wr, _, _, _)| self.params[wr].iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Adds `coeff · Σ W²` to nothing but the gradient: `2·coeff·W`.
    pub fn add_l2_gradient(&self, coeff: f64, grad: &mut [f64]) {
        if coeff == 0.0 {
            return;
        }
        for (wr, _, _, _) in self.layout() {
            for i in wr {
                grad[i] += 2.0 * coeff * self.params[i];
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.layers.pop().unwrap_or_default())
    }

    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), input.len()));
        }
        let n_layers = self.sizes.len() - 1;
        trace.layers.resize_with(n_layers + 1, Vec::new);
        trace.layers[0].clear();
        trace.layers[0].extend_from_slice(input);
        for (li, (wr, br, fi, fo)) in self.layout().enumerate() {
            let (prev, rest) = trace.layers.split_at_mut(li + 1);
            let x = &prev[li];
            let out = &mut rest[0];
            out.clear();
            let w = &self.params[wr];
            let b = &self.params[br];
            let last = li + 1 == n_layers;
            for o in 0..fo {
                let row = &w[o * fi..(o + 1) * fi];
                let mut z = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    z += wi * xi;
                }
                out.push(if last { z } else { z.max(0.0) });
            }
        }
        Ok(())
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output` for one
    /// sample whose forward pass produced `trace`.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layout: Vec<_> = self.layout().collect();
        let mut delta = grad_output.to_vec();
        let mut next = Vec::new();
        for (li, (wr, br, fi, fo)) in layout.into_iter().enumerate().rev() {
            let x = &trace.layers[li];
            let w = &self.params[wr.clone()];
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[br.start + o] += d;
                let g = &mut grad[wr.start + o * fi..wr.start + (o + 1) * fi];
                for (gi, xi) in g.iter_mut().zip(x.iter()) {
                    *gi += d * xi;
                }
            }
            if li == 0 {
                break;
            }
            next.clear();
            next.resize(fi, 0.0);
            for o in 0..fo {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fi..(o + 1) * fi];
                for (ni, wi) in next.iter_mut().zip(row) {
                    *ni += d * wi;
                }
            }
            // ReLU derivative at the input of this layer.
            for (ni, xi) in next.iter_mut().zip(x.iter()) {
                if *xi <= 0.0 {
                    *ni = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: vec![0.0; n_params],
                v: vec![0.0; n_params],
            },
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                if *lr == 0.0 {
                    return;
                }
                *step += 1;
                let bc1 = 1.0 - beta1.powi(*step as i32);
                let bc2 = 1.0 - beta2.powi(*step as i32);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= *lr * mh / (vh.sqrt() + *eps);
                }
            }
        }
    }
}

/// Draws `batch_size` indices uniformly with replacement.
pub fn sample_batch(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<usize> {
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}
