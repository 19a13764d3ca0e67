//! Recurrent weight structures: the dense `N x N` matrix and the length-`k`
//! kernel applied as a cross-correlation along the neuron axis.
//!
//! Conv semantics (no kernel flip, stride 1, `(k - 1) / 2` zeros each side):
//!
//! ```text
//! y[i] = sum_m w[m] * x[i + m - (k - 1) / 2]
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Dense,
    Conv,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentKernel {
    /// Row-major `W[i][j]`: input of neuron `i` from neuron `j`.
    Dense { neurons: usize, weights: Vec<f64> },
    Conv { weights: Vec<f64> },
}

impl RecurrentKernel {
    pub fn dense(neurons: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != neurons * neurons {
            return Err(invalid("w_rec", format!("need {} weights", neurons * neurons)));
        }
        Ok(Self::Dense { neurons, weights })
    }

    pub fn conv(weights: Vec<f64>) -> Result<Self> {
        if weights.len() % 2 == 0 {
            return Err(invalid("kernel_size", format!("must be odd, got {}", weights.len())));
        }
        Ok(Self::Conv { weights })
    }

    pub fn kind(&self) -> KernelKind {
        match self {
            Self::Dense { .. } => KernelKind::Dense,
            Self::Conv { .. } => KernelKind::Conv,
        }
    }

    pub fn weights(&self) -> &[f64] {
        match self {
            Self::Dense { weights, .. } | Self::Conv { weights } => weights,
        }
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        match self {
            Self::Dense { weights, .. } | Self::Conv { weights } => weights,
        }
    }

    /// `out += K x` for every row of a `(batch, N)` input.
    pub fn apply_accumulate(&self, x: &[f64], batch: usize, out: &mut [f64]) {
        let n = x.len() / batch.max(1);
        match self {
            Self::Dense { weights, .. } => {
                for (xr, yr) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    for (i, y) in yr.iter_mut().enumerate() {
                        let row = &weights[i * n..(i + 1) * n];
                        *y += row.iter().zip(xr).map(|(w, v)| w * v).sum::<f64>();
                    }
                }
            }
            Self::Conv { weights } => {
                let pad = weights.len() / 2;
                for (xr, yr) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    for (i, y) in yr.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (m, w) in weights.iter().enumerate() {
                            let src = i + m;
                            if src >= pad && src - pad < n {
                                acc += w * xr[src - pad];
                            }
                        }
                        *y += acc;
                    }
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_accumulate(x, batch, &mut out);
        out
    }

    /// `out += K^T dy`.
    pub fn apply_transpose_accumulate(&self, dy: &[f64], batch: usize, out: &mut [f64]) {
        let n = dy.len() / batch.max(1);
        match self {
            Self::Dense { weights, .. } => {
                for (gr, xr) in dy.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    for (i, &g) in gr.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let row = &weights[i * n..(i + 1) * n];
                        for (x, w) in xr.iter_mut().zip(row) {
                            *x += g * w;
                        }
                    }
                }
            }
            Self::Conv { weights } => {
                let pad = weights.len() / 2;
                for (gr, xr) in dy.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
                    for (i, &g) in gr.iter().enumerate() {
                        for (m, w) in weights.iter().enumerate() {
                            let src = i + m;
                            if src >= pad && src - pad < n {
                                xr[src - pad] += g * w;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates the weight gradient of `y = K x` given `dy`.
    pub fn accumulate_grad(&self, dy: &[f64], x: &[f64], batch: usize, grad: &mut [f64]) {
        let n = x.len() / batch.max(1);
        match self {
            Self::Dense { .. } => {
                for (gr, xr) in dy.chunks_exact(n).zip(x.chunks_exact(n)) {
                    for (i, &g) in gr.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        for (gw, &v) in grad[i * n..(i + 1) * n].iter_mut().zip(xr) {
                            *gw += g * v;
                        }
                    }
                }
            }
            Self::Conv { weights } => {
                let pad = weights.len() / 2;
                for (gr, xr) in dy.chunks_exact(n).zip(x.chunks_exact(n)) {
                    for (i, &g) in gr.iter().enumerate() {
                        for (m, gw) in grad.iter_mut().enumerate() {
                            let src = i + m;
                            if src >= pad && src - pad < n {
                                *gw += g * xr[src - pad];
                            }
                        }
                    }
                }
            }
        }
    }

    /// The dense matrix with `W[i][i + m - pad] = w[m]` inside the band and zero
    /// elsewhere; it reproduces the conv kernel exactly.
    pub fn banded(&self, neurons: usize) -> Self {
        match self {
            Self::Dense { .. } => self.clone(),
            Self::Conv { weights } => {
                let pad = weights.len() / 2;
                let mut dense = vec![0.0; neurons * neurons];
                for i in 0..neurons {
                    for (m, &w) in weights.iter().enumerate() {
                        let j = i + m;
                        if j >= pad && j - pad < neurons {
                            dense[i * neurons + j - pad] = w;
                        }
                    }
                }
                Self::Dense {
                    neurons,
                    weights: dense,
                }
            }
        }
    }
}

/// Kaiming-uniform bound `sqrt(6 / fan_in)`.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

pub fn init_kernel_with<R: Rng>(kind: KernelKind, neurons: usize, k: usize, rng: &mut R) -> Result<RecurrentKernel> {
    match kind {
        KernelKind::Dense => {
            let bound = kaiming_bound(neurons);
            let w = (0..neurons * neurons)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            RecurrentKernel::dense(neurons, w)
        }
        KernelKind::Conv => {
            if k % 2 == 0 {
                return Err(invalid("kernel_size", format!("must be odd, got {k}")));
            }
            let bound = kaiming_bound(k);
            RecurrentKernel::conv((0..k).map(|_| rng.random_range(-bound..=bound)).collect())
        }
    }
}

pub fn init_kernel(kind: KernelKind, neurons: usize, k: usize, seed: u64) -> Result<RecurrentKernel> {
    init_kernel_with(kind, neurons, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecurrentParams {
    pub weights: usize,
    pub delays: usize,
    pub total: usize,
}

/// Recurrent parameters of one layer: `N^2 + N` dense, `k + N` conv.
pub fn count_recurrent_params(kind: KernelKind, neurons: usize, k: usize) -> RecurrentParams {
    let weights = match kind {
        KernelKind::Dense => neurons * neurons,
        KernelKind::Conv => k,
    };
    RecurrentParams {
        weights,
        delays: neurons,
        total: weights + neurons,
    }
}

/// Percentage by which `conv` shrinks `dense`.
pub fn reduction_percent(dense: usize, conv: usize) -> f64 {
    100.0 * (dense as f64 - conv as f64) / dense as f64
}
