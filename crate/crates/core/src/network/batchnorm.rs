use serde::{Deserialize, Serialize};

/// Per-feature batch normalization over the joint (time x batch) axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// What the backward pass needs from a normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Whether batch statistics (rather than running ones) were used.
    pub batch_stats: bool,
}

impl BatchNorm {
    pub fn new(features: usize, momentum: f64, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            eps,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Normalizes `x` (rows of `features`) in place using the statistics of
    /// `x` itself. Returns the cache and the (biased) batch mean and variance.
    pub fn forward_batch(&self, x: &mut [f64]) -> (BnCache, Vec<f64>, Vec<f64>) {
        let n = self.features();
        let rows = x.len() / n;
        let mut mean = vec![0.0; n];
        for row in x.chunks_exact(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; n];
        for row in x.chunks_exact(n) {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let cache = self.normalize(x, &mean, inv_std, true);
        (cache, mean, var)
    }

    pub fn forward_running(&self, x: &mut [f64]) -> BnCache {
        let inv_std = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        self.normalize(x, &self.running_mean, inv_std, false)
    }

    fn normalize(&self, x: &mut [f64], mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> BnCache {
        let n = self.features();
        let mut xhat = vec![0.0; x.len()];
        for (row, hrow) in x.chunks_exact_mut(n).zip(xhat.chunks_exact_mut(n)) {
            for j in 0..n {
                let h = (row[j] - mean[j]) * inv_std[j];
                hrow[j] = h;
                row[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        }
    }

    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
        }
    }

    /// Turns `dy` into the input gradient in place; accumulates `dgamma`/`dbeta`.
    pub fn backward(&self, cache: &BnCache, dy: &mut [f64], dgamma: &mut [f64], dbeta: &mut [f64]) {
        let n = self.features();
        let rows = (dy.len() / n) as f64;
        let mut sum_dy = vec![0.0; n];
        let mut sum_dy_xhat = vec![0.0; n];
        for (row, hrow) in dy.chunks_exact(n).zip(cache.xhat.chunks_exact(n)) {
            for j in 0..n {
                sum_dy[j] += row[j];
                sum_dy_xhat[j] += row[j] * hrow[j];
            }
        }
        for j in 0..n {
            dgamma[j] += sum_dy_xhat[j];
            dbeta[j] += sum_dy[j];
        }
        for (row, hrow) in dy.chunks_exact_mut(n).zip(cache.xhat.chunks_exact(n)) {
            for j in 0..n {
                let scale = self.gamma[j] * cache.inv_std[j];
                row[j] = if cache.batch_stats {
                    scale * (row[j] - sum_dy[j] / rows - hrow[j] * sum_dy_xhat[j] / rows)
                } else {
                    scale * row[j]
                };
            }
        }
    }
}
