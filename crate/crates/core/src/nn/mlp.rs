use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network: tanh on hidden layers, linear output.
///
/// Parameters are stored flat, layer by layer, as a row-major
/// `n_out x n_in` weight matrix followed by `n_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// All-zero network.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + n_in * n_out] {
                *p = rng.random_range(-bound..bound);
            }
            offset += (n_in + 1) * n_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(Error::structural(format!(
                "expected {} parameters for layers {:?}, got {}",
                param_count(sizes),
                sizes,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numerical("non-finite network parameter"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Parameter range of the output layer.
    pub fn output_layer(&self) -> std::ops::Range<usize> {
        let n = self.sizes.len();
        let size = (self.sizes[n - 2] + 1) * self.sizes[n - 1];
        self.params.len() - size..self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut acts = Vec::new();
        self.forward_cached(&self.params, x, &mut acts);
        Ok(acts[acts.len() - self.output_size()..].to_vec())
    }

    /// Single-output forward pass.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        if self.output_size() != 1 {
            return Err(Error::structural(format!(
                "network has {} outputs, expected 1",
                self.output_size()
            )));
        }
        Ok(self.forward(x)?[0])
    }

    pub(crate) fn check_input(&self, n: usize) -> Result<()> {
        if n != self.input_size() {
            return Err(Error::structural(format!(
                "network expects {} inputs, got {n}",
                self.input_size()
            )));
        }
        Ok(())
    }

    /// Forward pass with explicit parameters, leaving every layer's
    /// activations (input first, output last) in `acts`.
    pub(crate) fn forward_cached(&self, params: &[f64], x: &[f64], acts: &mut Vec<f64>) {
        acts.clear();
        acts.extend_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        let mut offset = 0;
        let mut in_start = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offset..offset + n_in * n_out];
            let b = &params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            let out_start = acts.len();
            for j in 0..n_out {
                let row = &w[j * n_in..(j + 1) * n_in];
                let input = &acts[in_start..in_start + n_in];
                let z = b[j] + dot(row, input);
                acts.push(if l + 1 < n_layers { z.tanh() } else { z });
            }
            in_start = out_start;
            offset += (n_in + 1) * n_out;
        }
    }

    /// Reverse pass over cached activations. Adds parameter gradients into
    /// `dparams` when given and writes the input gradient into `dx`.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        acts: &[f64],
        dy: &[f64],
        mut dparams: Option<&mut [f64]>,
        dx: &mut [f64],
    ) {
        let n_layers = self.sizes.len() - 1;
        let mut delta = dy.to_vec();
        let mut act_end = acts.len() - self.output_size();
        let mut offset = params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= (n_in + 1) * n_out;
            let a_in = &acts[act_end - n_in..act_end];
            let w = &params[offset..offset + n_in * n_out];
            if let Some(g) = dparams.as_deref_mut() {
                let (gw, gb) = g[offset..offset + (n_in + 1) * n_out].split_at_mut(n_in * n_out);
                for j in 0..n_out {
                    let d = delta[j];
                    if d != 0.0 {
                        for (gi, ai) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(a_in) {
                            *gi += d * ai;
                        }
                    }
                    gb[j] += d;
                }
            }
            let mut prev = vec![0.0; n_in];
            for j in 0..n_out {
                let d = delta[j];
                if d != 0.0 {
                    for (pi, wi) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *pi += d * wi;
                    }
                }
            }
            if l > 0 {
                for (pi, ai) in prev.iter_mut().zip(a_in) {
                    *pi *= 1.0 - ai * ai;
                }
            }
            delta = prev;
            act_end -= n_in;
        }
        dx.copy_from_slice(&delta);
    }
}

/// Number of parameters of a network with the given layer sizes.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::structural(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
