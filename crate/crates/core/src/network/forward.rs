use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BnCache, HiddenLayer, NetworkModel, ReadoutMode};
use crate::data::SpikeTensor;
use crate::delay::{SchedulingBuffer, SpreadTable};
use crate::error::{Error, Result};
use crate::neuron::{heaviside, LifParams, Surrogate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Real-valued delays, spread width `sigma`, batch statistics, dropout.
    #[default]
    Train,
    /// Rounded delays, no spread, running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    #[default]
    Heaviside,
    /// Emits the surrogate's primitive instead of a hard spike, making the
    /// output a smooth function of every parameter.
    Smooth,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub mode: Mode,
    pub spikes: SpikeMode,
    pub record: bool,
    pub update_stats: bool,
    /// Per-layer reset masks, time-major `(T, B, N)`, replacing the masks
    /// the forward pass would derive from its own potentials.
    pub frozen_resets: Option<Vec<Vec<f64>>>,
}

impl RunOptions {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            record: true,
            update_stats: true,
            ..Self::default()
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            ..Self::default()
        }
    }
}

/// Per-layer activations kept for the backward pass. All sequences are
/// time-major `(T, B, N)`.
#[derive(Debug, Clone)]
pub struct LayerTape {
    pub spikes: Vec<f64>,
    pub hidden: Vec<f64>,
    pub resets: Vec<f64>,
    pub bn: Option<BnCache>,
    pub mask_ff: Option<Vec<f64>>,
    pub mask_rec: Option<Vec<f64>>,
    pub table: SpreadTable,
}

#[derive(Debug, Clone)]
pub struct Tape {
    pub mode: Mode,
    pub spikes: SpikeMode,
    pub batch: usize,
    pub time: usize,
    /// Network input, time-major `(T, B, C)`.
    pub input: Vec<f64>,
    pub layers: Vec<LayerTape>,
}

impl Tape {
    /// Per-layer reset masks, ready for [`RunOptions::frozen_resets`].
    pub fn resets(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.resets.clone()).collect()
    }

    /// Mean firing probability per layer.
    pub fn spike_rates(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.spikes.iter().sum::<f64>() / l.spikes.len().max(1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Row-major `(B, classes)`.
    pub logits: Vec<f64>,
    pub tape: Option<Tape>,
    batch_stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

/// `(B, T, C)` to `(T, B, C)`.
fn time_major(x: &SpikeTensor) -> Vec<f64> {
    let (b, t, c) = (x.batch, x.time, x.channels);
    let mut out = vec![0.0; b * t * c];
    for bi in 0..b {
        for ti in 0..t {
            let src = (bi * t + ti) * c;
            let dst = (ti * b + bi) * c;
            out[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
        }
    }
    out
}

/// `y[r] = x[r] W` for row-major `W (n_in, n_out)`; zero inputs are skipped.
pub(crate) fn project(x: &[f64], w: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let rows = x.len() / n_in;
    let mut y = vec![0.0; rows * n_out];
    for (xr, yr) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        for (i, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (yv, wv) in yr.iter_mut().zip(wr) {
                *yv += xv * wv;
            }
        }
    }
    y
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}

struct LayerOutput {
    tape: LayerTape,
    stats: Option<(Vec<f64>, Vec<f64>)>,
}

#[allow(clippy::too_many_arguments)]
fn run_layer(
    layer: &HiddenLayer,
    index: usize,
    x: &[f64],
    batch: usize,
    time: usize,
    sigma: f64,
    lif: &LifParams,
    surrogate: &Surrogate,
    opts: &RunOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<LayerOutput> {
    let n = layer.neurons();
    let width = batch * n;
    let mut z = project(x, &layer.w_ff, layer.n_in, n);

    let (bn, stats) = match (&layer.bn, opts.mode) {
        (Some(bn), Mode::Train) => {
            let (cache, mean, var) = bn.forward_batch(&mut z);
            (Some(cache), Some((mean, var)))
        }
        (Some(bn), Mode::Eval) => (Some(bn.forward_running(&mut z)), None),
        (None, _) => (None, None),
    };

    let (mask_ff, mask_rec) = match (opts.mode, rng) {
        (Mode::Train, Some(rng)) => {
            let ff = (layer.config.dropout_ff > 0.0).then(|| dropout_mask(rng, width, layer.config.dropout_ff));
            let rec = (layer.config.dropout_rec > 0.0).then(|| dropout_mask(rng, width, layer.config.dropout_rec));
            (ff, rec)
        }
        _ => (None, None),
    };

    let table = match opts.mode {
        Mode::Train => SpreadTable::new(&layer.delays.values, sigma),
        Mode::Eval => SpreadTable::new(&layer.delays.round_for_inference().values, 0.0),
    };
    let len = SchedulingBuffer::required_len(layer.delays.d_max, table.sigma).max(table.last());
    let mut buffer = SchedulingBuffer::new(batch, n, len)?;
    let frozen = opts.frozen_resets.as_ref().map(|f| f[index].as_slice());

    let steps = time * width;
    let mut spikes = vec![0.0; steps];
    let mut hidden = vec![0.0; steps];
    let mut resets = vec![0.0; steps];
    let mut v = vec![0.0; width];
    let mut rec = vec![0.0; width];
    let mut scratch = Vec::with_capacity(width);

    for t in 0..time {
        buffer.pop_into(&mut rec);
        let base = t * width;
        for idx in 0..width {
            let ff = match &mask_ff {
                Some(m) => z[base + idx] * m[idx],
                None => z[base + idx],
            };
            let fb = match &mask_rec {
                Some(m) => rec[idx] * m[idx],
                None => rec[idx],
            };
            let h = lif.integrate(v[idx], ff + fb);
            let over = h - lif.v_th;
            let s = match opts.spikes {
                SpikeMode::Heaviside => heaviside(over),
                SpikeMode::Smooth => surrogate.primitive(over),
            };
            let r = match frozen {
                Some(f) => f[base + idx],
                None => heaviside(over),
            };
            v[idx] = lif.reset(h, r);
            hidden[base + idx] = h;
            spikes[base + idx] = s;
            resets[base + idx] = r;
        }
        if hidden[base..base + width].iter().any(|h| !h.is_finite()) {
            return Err(Error::NonFinite { layer: index, t });
        }
        buffer.schedule_through(&spikes[base..base + width], &table, &layer.kernel, &mut scratch)?;
    }

    Ok(LayerOutput {
        tape: LayerTape {
            spikes,
            hidden,
            resets,
            bn,
            mask_ff,
            mask_rec,
            table,
        },
        stats,
    })
}

impl NetworkModel {
    fn run_with(&self, input: &SpikeTensor, opts: &RunOptions, mut rng: Option<&mut ChaCha8Rng>) -> Result<RunOutput> {
        if input.channels != self.config.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, model expects {}",
                input.channels, self.config.input_channels
            )));
        }
        if let Some(f) = &opts.frozen_resets {
            if f.len() != self.layers.len() {
                return Err(Error::Shape("one reset mask per hidden layer required".into()));
            }
        }
        let (batch, time) = (input.batch, input.time);
        let lif = self.config.lif();
        let surrogate = self.config.surrogate();
        let x0 = time_major(input);
        let mut layer_tapes: Vec<LayerTape> = Vec::with_capacity(self.layers.len());
        let mut batch_stats = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = match layer_tapes.last() {
                Some(prev) => prev.spikes.as_slice(),
                None => x0.as_slice(),
            };
            let out = run_layer(layer, l, x, batch, time, self.sigma, &lif, &surrogate, opts, rng.as_deref_mut())?;
            batch_stats.push(out.stats);
            layer_tapes.push(out.tape);
        }
        let last = &layer_tapes.last().expect("at least one layer").spikes;
        let logits = self.readout_forward(last, batch, time)?;
        let tape = opts.record.then(|| Tape {
            mode: opts.mode,
            spikes: opts.spikes,
            batch,
            time,
            input: x0,
            layers: layer_tapes,
        });
        Ok(RunOutput {
            logits,
            tape,
            batch_stats,
        })
    }

    fn readout_forward(&self, s: &[f64], batch: usize, time: usize) -> Result<Vec<f64>> {
        let ro = &self.readout;
        let beta = self.config.readout_lif().beta;
        let c = ro.classes;
        let mut h = vec![0.0; batch * c];
        let mut acc = vec![0.0; batch * c];
        for t in 0..time {
            let rows = &s[t * batch * ro.n_in..(t + 1) * batch * ro.n_in];
            let mut a = project(rows, &ro.weights, ro.n_in, c);
            for row in a.chunks_exact_mut(c) {
                for (v, b) in row.iter_mut().zip(&ro.bias) {
                    *v += b;
                }
            }
            for (hv, av) in h.iter_mut().zip(&a) {
                *hv = beta * *hv + (1.0 - beta) * av;
            }
            if self.config.readout == ReadoutMode::Sum {
                for (s, hv) in acc.iter_mut().zip(&h) {
                    *s += hv;
                }
            }
            if h.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: self.layers.len(),
                    t,
                });
            }
        }
        Ok(match self.config.readout {
            ReadoutMode::Last => h,
            ReadoutMode::Sum => acc,
        })
    }

    /// General forward pass. Train-mode runs draw dropout masks from the
    /// model's own stream and, with `update_stats`, fold the batch
    /// statistics into the running ones.
    pub fn run(&mut self, input: &SpikeTensor, opts: &RunOptions) -> Result<RunOutput> {
        let out = if opts.mode == Mode::Train {
            let mut rng = self.rng.clone();
            let out = self.run_with(input, opts, Some(&mut rng));
            self.rng = rng;
            out?
        } else {
            self.run_with(input, opts, None)?
        };
        if opts.update_stats {
            for (layer, stats) in self.layers.iter_mut().zip(&out.batch_stats) {
                if let (Some(bn), Some((mean, var))) = (&mut layer.bn, stats) {
                    bn.update_running(mean, var);
                }
            }
        }
        Ok(out)
    }

    /// Logits `(B, classes)` under the current [`Mode`].
    pub fn forward(&mut self, input: &SpikeTensor) -> Result<Vec<f64>> {
        match self.mode {
            Mode::Train => Ok(self.run(input, &RunOptions { record: false, ..RunOptions::train() })?.logits),
            Mode::Eval => self.forward_eval(input),
        }
    }

    pub fn forward_eval(&self, input: &SpikeTensor) -> Result<Vec<f64>> {
        Ok(self.run_with(input, &RunOptions::eval(), None)?.logits)
    }

    pub fn forward_train(&mut self, input: &SpikeTensor) -> Result<(Vec<f64>, Tape)> {
        let out = self.run(input, &RunOptions::train())?;
        Ok((out.logits, out.tape.expect("recorded")))
    }

    /// Arg-max class per sample under eval semantics.
    pub fn predict(&self, input: &SpikeTensor) -> Result<Vec<usize>> {
        let logits = self.forward_eval(input)?;
        Ok(logits
            .chunks_exact(self.config.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay::DelayVector;
    use crate::network::{NetworkConfig, ReadoutMode};
    use crate::recurrent::{KernelKind, RecurrentKernel};

    fn single_neuron(kernel_weight: f64, delay: f64) -> NetworkModel {
        let mut cfg = NetworkConfig::uniform(1, 1, 1, 1, KernelKind::Dense, 1);
        cfg.layers[0].batchnorm = false;
        cfg.readout = ReadoutMode::Last;
        let mut m = NetworkModel::new(cfg, 0).unwrap();
        m.layers[0].w_ff = vec![1.0];
        m.layers[0].kernel = RecurrentKernel::dense(1, vec![kernel_weight]).unwrap();
        m.layers[0].delays = DelayVector::constant(1, delay, 64, true);
        m.readout.weights = vec![1.0];
        m.readout.bias = vec![0.0];
        m
    }

    #[test]
    fn single_neuron_trace_by_hand() {
        // tau = 2: H = V/2 + I/2, threshold 1, hard reset.
        let m = single_neuron(2.0, 1.0);
        let input = SpikeTensor::from_vec(1, 5, 1, vec![4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let out = m.run_with(&input, &RunOptions { record: true, ..RunOptions::eval() }, None).unwrap();
        let tape = out.tape.unwrap();
        // t0: H = 2 -> spike, V = 0. The spike (delay 1) arrives at t2 through w = 2.
        // t1: H = 0. t2: H = 1 -> spike. That spike arrives at t4.
        // t3: H = 0. t4: H = 1 -> spike.
        assert_eq!(tape.layers[0].hidden, vec![2.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(tape.layers[0].spikes, vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        // Readout: h = h/2 + s/2.
        let mut h = 0.0;
        for s in [1.0, 0.0, 1.0, 0.0, 1.0] {
            h = 0.5 * h + 0.5 * s;
        }
        assert!((out.logits[0] - h).abs() < 1e-15);
    }

    #[test]
    fn zero_delay_feeds_back_on_next_step() {
        let m = single_neuron(2.0, 0.0);
        let input = SpikeTensor::from_vec(1, 3, 1, vec![4.0, 0.0, 0.0]).unwrap();
        let out = m.run_with(&input, &RunOptions { record: true, ..RunOptions::eval() }, None).unwrap();
        assert_eq!(out.tape.unwrap().layers[0].hidden, vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_kernel_equals_feedforward_only() {
        let mut cfg = NetworkConfig::uniform(5, 3, 2, 6, KernelKind::Conv, 3);
        cfg.layers[0].batchnorm = false;
        cfg.layers[1].batchnorm = false;
        let mut m = NetworkModel::new(cfg, 4).unwrap();
        for layer in &mut m.layers {
            layer.kernel.weights_mut().fill(0.0);
        }
        m.sigma = 1.5;
        let x = SpikeTensor::random(2, 12, 5, 0.4, 3);
        let out = m.run(&x, &RunOptions::train()).unwrap();

        // Reference: plain LIF over the projections, no recurrence at all.
        let lif = m.config.lif();
        let mut inp = time_major(&x);
        let mut n_in = 5;
        for layer in &m.layers {
            let z = project(&inp, &layer.w_ff, n_in, 6);
            let mut v = vec![0.0; 12];
            let mut s = vec![0.0; z.len()];
            for t in 0..12 {
                for i in 0..12 {
                    let h = lif.integrate(v[i], z[t * 12 + i]);
                    s[t * 12 + i] = heaviside(h - 1.0);
                    v[i] = lif.reset(h, s[t * 12 + i]);
                }
            }
            inp = s;
            n_in = 6;
        }
        assert_eq!(out.tape.unwrap().layers[1].spikes, inp);
    }

    #[test]
    fn eval_forward_is_deterministic_and_pure() {
        let cfg = NetworkConfig::uniform(4, 2, 2, 8, KernelKind::Conv, 3);
        let m = NetworkModel::new(cfg, 1).unwrap();
        let x = SpikeTensor::random(3, 10, 4, 0.3, 0);
        assert_eq!(m.forward_eval(&x).unwrap(), m.forward_eval(&x).unwrap());
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let m = NetworkModel::new(NetworkConfig::uniform(4, 2, 1, 8, KernelKind::Conv, 3), 1).unwrap();
        let x = SpikeTensor::random(1, 5, 3, 0.3, 0);
        assert!(matches!(m.forward_eval(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn nan_input_reports_layer_and_step() {
        let m = NetworkModel::new(NetworkConfig::uniform(2, 2, 1, 4, KernelKind::Conv, 3), 1).unwrap();
        let mut x = SpikeTensor::zeros(1, 4, 2);
        x.set(0, 2, 0, f64::NAN);
        match m.forward_eval(&x) {
            Err(Error::NonFinite { layer: 0, t: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }
}
