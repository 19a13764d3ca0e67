//! Dense-versus-conv inference timing and the per-layer delay table.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::SpikeTensor;
use crate::delay::{delay_stats, DelayStats};
use crate::error::{invalid, Result};
use crate::network::{NetworkConfig, NetworkModel};
use crate::recurrent::{count_recurrent_params, reduction_percent, KernelKind, RecurrentParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub neurons: usize,
    pub layers: usize,
    pub time_steps: usize,
    pub batch: usize,
    pub input_channels: usize,
    pub classes: usize,
    pub kernel_size: usize,
    pub d_max: u32,
    pub input_density: f64,
    pub warmup: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            neurons: 256,
            layers: 2,
            time_steps: 100,
            batch: 16,
            input_channels: 140,
            classes: 20,
            kernel_size: 3,
            d_max: 64,
            input_density: 0.05,
            warmup: 1,
            repetitions: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub kernel: KernelKind,
    pub recurrent: RecurrentParams,
    pub recurrent_weights_total: usize,
    pub batch_ms: Vec<f64>,
    pub median_batch_ms: f64,
    pub median_sample_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub threads: usize,
    pub dense: BenchEntry,
    pub conv: BenchEntry,
    /// Dense over conv median time.
    pub speedup: f64,
    /// Reduction of per-layer recurrent parameters (weights and delays).
    pub reduction_percent: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn time_model(model: &NetworkModel, input: &SpikeTensor, cfg: &BenchConfig) -> Result<Vec<f64>> {
    for _ in 0..cfg.warmup {
        model.forward_eval(input)?;
    }
    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let start = Instant::now();
        std::hint::black_box(model.forward_eval(std::hint::black_box(input))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(times)
}

fn entry(model: &NetworkModel, input: &SpikeTensor, cfg: &BenchConfig, kernel: KernelKind) -> Result<BenchEntry> {
    let batch_ms = time_model(model, input, cfg)?;
    let median_batch_ms = median(&batch_ms);
    Ok(BenchEntry {
        kernel,
        recurrent: count_recurrent_params(kernel, cfg.neurons, cfg.kernel_size),
        recurrent_weights_total: model.count_params().recurrent_weights,
        batch_ms,
        median_batch_ms,
        median_sample_ms: median_batch_ms / cfg.batch as f64,
    })
}

/// Times eval-mode forwards of a conv model and a dense model that share
/// every other parameter (feedforward weights, batch norm, delays, readout).
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repetitions < 5 {
        return Err(invalid("repetitions", format!("need at least 5, got {}", cfg.repetitions)));
    }
    if cfg.batch == 0 || cfg.time_steps == 0 {
        return Err(invalid("batch", "batch and time_steps must be positive"));
    }
    let mut net = NetworkConfig::uniform(
        cfg.input_channels,
        cfg.classes,
        cfg.layers,
        cfg.neurons,
        KernelKind::Conv,
        cfg.kernel_size,
    );
    net.d_max = cfg.d_max;
    let conv = NetworkModel::new(net.clone(), cfg.seed)?;
    for lc in &mut net.layers {
        lc.kernel = KernelKind::Dense;
    }
    let mut dense = NetworkModel::new(net, cfg.seed)?;
    for (d, c) in dense.layers.iter_mut().zip(&conv.layers) {
        d.w_ff.clone_from(&c.w_ff);
        d.bn.clone_from(&c.bn);
        d.delays = c.delays.round_for_inference();
    }
    dense.readout = conv.readout.clone();

    let input = SpikeTensor::random(cfg.batch, cfg.time_steps, cfg.input_channels, cfg.input_density, cfg.seed);
    let dense_entry = entry(&dense, &input, cfg, KernelKind::Dense)?;
    let conv_entry = entry(&conv, &input, cfg, KernelKind::Conv)?;
    let speedup = dense_entry.median_batch_ms / conv_entry.median_batch_ms;
    let reduction = reduction_percent(dense_entry.recurrent.total, conv_entry.recurrent.total);
    Ok(BenchReport {
        config: *cfg,
        threads: 1,
        dense: dense_entry,
        conv: conv_entry,
        speedup,
        reduction_percent: reduction,
    })
}

impl BenchReport {
    pub fn render(&self) -> String {
        let mut out = String::from("kernel\trec. weights/layer\trec. params/layer\tmedian batch [ms]\tper sample [ms]\n");
        for e in [&self.dense, &self.conv] {
            out.push_str(&format!(
                "{:?}\t{}\t{}\t{:.3}\t{:.4}\n",
                e.kernel, e.recurrent.weights, e.recurrent.total, e.median_batch_ms, e.median_sample_ms
            ));
        }
        out.push_str(&format!("speedup\t{:.1}x\n", self.speedup));
        out.push_str(&format!("parameter reduction\t{:.1}%\n", self.reduction_percent));
        out
    }
}

/// Per-layer delay statistics of a model.
pub fn layer_delay_stats(model: &NetworkModel) -> Result<Vec<DelayStats>> {
    model.layers.iter().map(|l| delay_stats(&l.delays)).collect()
}

/// Tab-separated table with one row per hidden layer, numbered from 1.
pub fn stats_table(model: &NetworkModel) -> Result<String> {
    let mut out = String::from(DelayStats::HEADER);
    out.push('\n');
    for (l, s) in layer_delay_stats(model)?.iter().enumerate() {
        out.push_str(&s.row(l + 1));
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_bench_reports_counts() {
        let cfg = BenchConfig {
            neurons: 32,
            time_steps: 10,
            batch: 2,
            input_channels: 8,
            d_max: 8,
            ..BenchConfig::default()
        };
        let r = bench(&cfg).unwrap();
        assert_eq!(r.dense.recurrent.weights, 1024);
        assert_eq!(r.conv.recurrent.weights, 3);
        assert_eq!(r.dense.recurrent_weights_total, 2048);
        assert_eq!(r.conv.batch_ms.len(), 5);
        assert!(r.render().contains("speedup"));
    }

    #[test]
    fn too_few_repetitions_rejected() {
        let cfg = BenchConfig {
            repetitions: 4,
            ..BenchConfig::default()
        };
        assert!(bench(&cfg).unwrap_err().to_string().contains("repetitions"));
    }

    #[test]
    fn stats_table_rows() {
        let mut model = NetworkModel::new(NetworkConfig::uniform(4, 2, 3, 5, KernelKind::Conv, 3), 0).unwrap();
        for l in &mut model.layers {
            l.delays.values.fill(0.0);
        }
        let table = stats_table(&model).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("Mean\tStd\tRange"));
        assert_eq!(lines[1], "1\t0.00\t0.00\t[0, 0]");
    }
}
