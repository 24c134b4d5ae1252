//! Dense layers with explicitly stored weights.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{ensure_len, Result};
use crate::rng::uniform_vec;

/// `y = W x + b` with `W` stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Square identity map (requires `in_dim == out_dim`).
    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    /// Uniform in `±1/sqrt(in_dim)`, the usual fan-in scaling.
    pub fn random<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let scale = 1.0 / libm::sqrt(in_dim.max(1) as f64);
        Self {
            in_dim,
            out_dim,
            weight: uniform_vec(rng, in_dim * out_dim, scale),
            bias: uniform_vec(rng, out_dim, scale),
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        ensure_len("linear weight", in_dim * out_dim, weight.len())?;
        ensure_len("linear bias", out_dim, bias.len())?;
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }

    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim.max(1)).zip(&self.bias))
        {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc;
        }
        if self.in_dim == 0 {
            out.copy_from_slice(&self.bias);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        self.forward_into(x, &mut out);
        out
    }

    /// Apply to each of `rows` consecutive inputs.
    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; rows * self.out_dim];
        for (xi, oi) in x
            .chunks_exact(self.in_dim)
            .zip(out.chunks_exact_mut(self.out_dim))
        {
            self.forward_into(xi, oi);
        }
        out
    }

    /// Multiply-adds plus bias adds for one application.
    pub fn flops(&self) -> u64 {
        2 * (self.in_dim as u64) * (self.out_dim as u64)
    }
}

/// Two dense layers with a tanh in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Self {
            hidden: Linear::zeros(in_dim, hidden),
            output: Linear::zeros(hidden, out_dim),
        }
    }

    pub fn random<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: Linear::random(in_dim, hidden, rng),
            output: Linear::random(hidden, out_dim, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.out_dim
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    /// `scratch` must hold `hidden_dim()` values.
    pub fn forward_into(&self, x: &[f64], scratch: &mut [f64], out: &mut [f64]) {
        self.hidden.forward_into(x, scratch);
        for h in scratch.iter_mut() {
            *h = libm::tanh(*h);
        }
        self.output.forward_into(scratch, out);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = vec![0.0; self.hidden_dim()];
        let mut out = vec![0.0; self.out_dim()];
        self.forward_into(x, &mut scratch, &mut out);
        out
    }

    pub fn forward_rows(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut scratch = vec![0.0; self.hidden_dim()];
        let mut out = vec![0.0; rows * self.out_dim()];
        for (xi, oi) in x
            .chunks_exact(self.in_dim())
            .zip(out.chunks_exact_mut(self.out_dim()))
        {
            self.forward_into(xi, &mut scratch, oi);
        }
        out
    }

    /// Both layers plus one transcendental per hidden unit.
    pub fn flops(&self) -> u64 {
        self.hidden.flops() + self.hidden.out_dim as u64 + self.output.flops()
    }
}
