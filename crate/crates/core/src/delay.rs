//! Learnable axonal delays.
//!
//! A spike of neuron `j` emitted at step `t` reaches its targets at
//! `t + 1 + d_j`. For real-valued `d_j` the spike is spread over neighbouring
//! integer offsets by the triangular kernel
//!
//! ```text
//! h(tau) = max(0, (1 + sigma - |tau - (1 + d)|) / (1 + sigma)^2)
//! ```
//!
//! whose width `sigma` is annealed towards zero during training. At `sigma = 0`
//! the kernel linearly interpolates between the two nearest integer offsets.
//! Offsets `tau < 1` would land in the past and are dropped.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::recurrent::RecurrentKernel;

/// Triangular spread of a spike with delay `d` at integer offset `tau`.
#[inline]
pub fn spread(tau: i64, d: f64, sigma: f64) -> f64 {
    let width = 1.0 + sigma;
    ((width - (tau as f64 - (1.0 + d)).abs()) / (width * width)).max(0.0)
}

/// `d spread / d d`. Zero outside the open support and at the kinks.
#[inline]
pub fn spread_grad_d(tau: i64, d: f64, sigma: f64) -> f64 {
    let width = 1.0 + sigma;
    let x = tau as f64 - (1.0 + d);
    if x == 0.0 || x.abs() >= width {
        0.0
    } else {
        x.signum() / (width * width)
    }
}

/// Distance from `d` to the nearest point where some offset's spread is not
/// differentiable in `d`.
pub fn kink_distance(d: f64, sigma: f64) -> f64 {
    let frac_dist = |x: f64| {
        let f = x - x.floor();
        f.min(1.0 - f)
    };
    // kinks where tau - 1 - d is 0 or +-(1 + sigma) for integer tau
    frac_dist(d).min(frac_dist(d - sigma)).min(frac_dist(d + sigma))
}

/// Spread coefficients of every neuron, laid out offset-major:
/// `coef[(tau - first) * neurons + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadTable {
    pub first: usize,
    pub rows: usize,
    pub neurons: usize,
    pub sigma: f64,
    pub coef: Vec<f64>,
    pub grad: Vec<f64>,
    /// Rows holding at least one nonzero coefficient.
    pub active: Vec<bool>,
}

impl SpreadTable {
    pub fn new(delays: &[f64], sigma: f64) -> Self {
        let neurons = delays.len();
        let bounds: Vec<(usize, usize)> = delays
            .iter()
            .map(|&d| {
                let lo = ((d - sigma).floor() + 1.0).max(1.0) as usize;
                let hi = ((d + sigma + 2.0).ceil() - 1.0).max(1.0) as usize;
                (lo, hi)
            })
            .collect();
        let first = bounds.iter().map(|b| b.0).min().unwrap_or(1);
        let last = bounds.iter().map(|b| b.1).max().unwrap_or(0);
        let rows = (last + 1).saturating_sub(first);
        let mut coef = vec![0.0; rows * neurons];
        let mut grad = vec![0.0; rows * neurons];
        let mut active = vec![false; rows];
        for (j, (&d, &(lo, hi))) in delays.iter().zip(&bounds).enumerate() {
            for tau in lo..=hi {
                let r = tau - first;
                let c = spread(tau as i64, d, sigma);
                coef[r * neurons + j] = c;
                grad[r * neurons + j] = spread_grad_d(tau as i64, d, sigma);
                active[r] |= c != 0.0;
            }
        }
        Self {
            first,
            rows,
            neurons,
            sigma,
            coef,
            grad,
            active,
        }
    }

    /// Largest offset with a coefficient slot.
    pub fn last(&self) -> usize {
        self.first + self.rows - 1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.coef[r * self.neurons..(r + 1) * self.neurons]
    }

    pub fn grad_row(&self, r: usize) -> &[f64] {
        &self.grad[r * self.neurons..(r + 1) * self.neurons]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayInit {
    /// `|N(0, scale)|`, clamped to `d_max`; `scale` defaults to `d_max / 4`.
    HalfNormal { scale: Option<f64> },
    Uniform,
    Constant { value: f64 },
}

impl Default for DelayInit {
    fn default() -> Self {
        DelayInit::HalfNormal { scale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayVector {
    pub values: Vec<f64>,
    pub d_max: u32,
    pub trainable: bool,
}

impl DelayVector {
    pub fn constant(n: usize, value: f64, d_max: u32, trainable: bool) -> Self {
        let mut v = Self {
            values: vec![value; n],
            d_max,
            trainable,
        };
        v.clamp();
        v
    }

    pub fn init<R: Rng>(n: usize, d_max: u32, init: DelayInit, rng: &mut R) -> Self {
        let cap = d_max as f64;
        let values = match init {
            DelayInit::HalfNormal { scale } => {
                let s = scale.unwrap_or(cap / 4.0);
                let normal = Normal::new(0.0, s.max(f64::MIN_POSITIVE)).unwrap();
                (0..n).map(|_| normal.sample(rng).abs().min(cap)).collect()
            }
            DelayInit::Uniform => (0..n).map(|_| rng.random::<f64>() * cap).collect(),
            DelayInit::Constant { value } => vec![value.clamp(0.0, cap); n],
        };
        Self {
            values,
            d_max,
            trainable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn clamp(&mut self) {
        let cap = self.d_max as f64;
        for d in &mut self.values {
            *d = d.clamp(0.0, cap);
        }
    }

    /// Nearest integer, halves rounded up; clears the trainable flag.
    pub fn round_for_inference(&self) -> Self {
        Self {
            values: self.values.iter().map(|&d| round_half_up(d)).collect(),
            d_max: self.d_max,
            trainable: false,
        }
    }
}

#[inline]
pub fn round_half_up(d: f64) -> f64 {
    (d + 0.5).floor()
}

/// Annealing state of the spread width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadConfig {
    pub sigma: f64,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub sigma_floor: f64,
}

impl SpreadConfig {
    pub const DEFAULT_FLOOR: f64 = 0.01;

    pub fn new(sigma_init: f64, sigma_decay: f64) -> Result<Self> {
        if !(sigma_init >= 0.0 && sigma_init.is_finite()) {
            return Err(invalid("sigma_init", format!("must be finite and >= 0, got {sigma_init}")));
        }
        if !(sigma_decay > 0.0 && sigma_decay < 1.0) {
            return Err(invalid("sigma_decay", format!("must lie in (0, 1), got {sigma_decay}")));
        }
        Ok(Self {
            sigma: sigma_init,
            sigma_init,
            sigma_decay,
            sigma_floor: Self::DEFAULT_FLOOR,
        })
    }

    /// One epoch of multiplicative decay; snaps to exactly 0 below the floor.
    pub fn anneal(&self) -> Self {
        let mut next = *self;
        next.sigma = self.sigma * self.sigma_decay;
        if next.sigma < self.sigma_floor {
            next.sigma = 0.0;
        }
        next
    }

    /// The width in force during epoch `epoch` (0-based).
    pub fn at_epoch(&self, epoch: usize) -> Self {
        let mut cfg = Self {
            sigma: self.sigma_init,
            ..*self
        };
        for _ in 0..epoch {
            cfg = cfg.anneal();
        }
        cfg
    }
}

/// Circular buffer of future recurrent input, `len` slots of `batch x neurons`.
///
/// `head` is the slot returned by the next [`pop_current`](Self::pop_current).
/// A contribution scheduled at offset `tau >= 1` is returned by the `tau`-th
/// pop from now, i.e. a spike emitted at step `t` (after that step's pop)
/// arrives at step `t + tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingBuffer {
    batch: usize,
    neurons: usize,
    len: usize,
    head: usize,
    buf: Vec<f64>,
}

impl SchedulingBuffer {
    pub fn new(batch: usize, neurons: usize, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(invalid("buffer_len", "must be at least 1"));
        }
        Ok(Self {
            batch,
            neurons,
            len,
            head: 0,
            buf: vec![0.0; len * batch * neurons],
        })
    }

    /// Slot count covering the widest spread a delay in `[0, d_max]` can
    /// produce at width `sigma`.
    pub fn required_len(d_max: u32, sigma: f64) -> usize {
        (d_max as f64 + sigma + 2.0).ceil() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.buf.iter().all(|&v| v == 0.0)
    }

    pub fn head(&self) -> usize {
        self.head
    }

    fn width(&self) -> usize {
        self.batch * self.neurons
    }

    fn slot_mut(&mut self, tau: usize) -> Result<&mut [f64]> {
        if tau == 0 || tau > self.len {
            return Err(Error::BufferTooShort {
                offset: tau,
                len: self.len,
            });
        }
        let w = self.width();
        let slot = (self.head + tau - 1) % self.len;
        Ok(&mut self.buf[slot * w..(slot + 1) * w])
    }

    fn check_table(&self, values: &[f64], table: &SpreadTable) -> Result<()> {
        if values.len() != self.width() || table.neurons != self.neurons {
            return Err(Error::Shape(format!(
                "scheduling {} values / {} spread columns into a {}x{} buffer",
                values.len(),
                table.neurons,
                self.batch,
                self.neurons
            )));
        }
        if table.rows > 0 && table.last() > self.len {
            return Err(Error::BufferTooShort {
                offset: table.last(),
                len: self.len,
            });
        }
        Ok(())
    }

    /// Adds `spread(tau, d_j, sigma) * values[b, j]` to the slot at every
    /// offset `tau` of the table.
    pub fn schedule(&mut self, values: &[f64], table: &SpreadTable) -> Result<()> {
        self.check_table(values, table)?;
        let n = self.neurons;
        for r in 0..table.rows {
            if !table.active[r] {
                continue;
            }
            let coef = &table.coef[r * n..(r + 1) * n];
            let slot = self.slot_mut(table.first + r)?;
            for (dst_row, src_row) in slot.chunks_exact_mut(n).zip(values.chunks_exact(n)) {
                for j in 0..n {
                    dst_row[j] += coef[j] * src_row[j];
                }
            }
        }
        Ok(())
    }

    /// Schedules `kernel * (h(tau) ⊙ spikes)` at every offset `tau`: the
    /// spikes are spread per presynaptic neuron first, then mixed by the
    /// recurrent kernel, and the result is accumulated into the slot.
    /// `scratch` is reused across calls.
    pub fn schedule_through(
        &mut self,
        spikes: &[f64],
        table: &SpreadTable,
        kernel: &RecurrentKernel,
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_table(spikes, table)?;
        let n = self.neurons;
        let batch = self.batch;
        scratch.resize(spikes.len(), 0.0);
        for r in 0..table.rows {
            if !table.active[r] {
                continue;
            }
            let coef = &table.coef[r * n..(r + 1) * n];
            for (dst, src) in scratch.chunks_exact_mut(n).zip(spikes.chunks_exact(n)) {
                for j in 0..n {
                    dst[j] = coef[j] * src[j];
                }
            }
            let slot = self.slot_mut(table.first + r)?;
            kernel.apply_accumulate(scratch, batch, slot);
        }
        Ok(())
    }

    /// Copies the head slot into `out`, zeroes it and advances the head.
    pub fn pop_into(&mut self, out: &mut [f64]) {
        let w = self.width();
        let slot = &mut self.buf[self.head * w..(self.head + 1) * w];
        out.copy_from_slice(slot);
        slot.fill(0.0);
        self.head = (self.head + 1) % self.len;
    }

    pub fn pop_current(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        self.pop_into(&mut out);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean: f64,
    pub std: f64,
    pub min: i64,
    pub max: i64,
}

/// Population statistics of the rounded delays.
pub fn delay_stats(delays: &DelayVector) -> Result<DelayStats> {
    if delays.is_empty() {
        return Err(Error::EmptyDelays);
    }
    let rounded: Vec<f64> = delays.values.iter().map(|&d| round_half_up(d)).collect();
    let n = rounded.len() as f64;
    let mean = rounded.iter().sum::<f64>() / n;
    let var = rounded.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(DelayStats {
        mean,
        std: var.sqrt(),
        min: rounded.iter().copied().fold(f64::INFINITY, f64::min) as i64,
        max: rounded.iter().copied().fold(f64::NEG_INFINITY, f64::max) as i64,
    })
}

impl DelayStats {
    pub const HEADER: &'static str = "layer\tMean\tStd\tRange";

    pub fn row(&self, layer: usize) -> String {
        format!("{layer}\t{:.2}\t{:.2}\t[{}, {}]", self.mean, self.std, self.min, self.max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn integer_delay_without_spread() {
        for tau in -3..12 {
            let expect = if tau == 4 { 1.0 } else { 0.0 };
            assert_eq!(spread(tau, 3.0, 0.0), expect, "tau={tau}");
        }
    }

    #[test]
    fn fractional_delay_interpolates() {
        assert!((spread(3, 2.3, 0.0) - 0.7).abs() < TOL);
        assert!((spread(4, 2.3, 0.0) - 0.3).abs() < TOL);
        let sum: f64 = (-5..15).map(|t| spread(t, 2.3, 0.0)).sum();
        assert!((sum - 1.0).abs() < TOL);
    }

    #[test]
    fn unit_width_triangle() {
        let expect = [(1, 0.0), (2, 0.25), (3, 0.5), (4, 0.25), (5, 0.0)];
        for (tau, v) in expect {
            assert!((spread(tau, 2.0, 1.0) - v).abs() < TOL, "tau={tau}");
        }
    }

    #[test]
    fn gradient_values() {
        assert_eq!(spread_grad_d(3, 2.3, 0.0), -1.0);
        assert_eq!(spread_grad_d(4, 2.0, 1.0), 0.25);
        assert_eq!(spread_grad_d(40, 2.0, 1.0), 0.0);
        assert_eq!(spread_grad_d(3, 2.0, 1.0), 0.0);
    }

    #[test]
    fn table_matches_pointwise_spread() {
        let delays = [0.0, 2.3, 5.5, 0.2];
        for sigma in [0.0, 0.7, 3.0] {
            let table = SpreadTable::new(&delays, sigma);
            assert!(table.first >= 1);
            for (j, &d) in delays.iter().enumerate() {
                for tau in 1..20i64 {
                    let stored = if (tau as usize) < table.first || tau as usize > table.last() {
                        0.0
                    } else {
                        table.coef[(tau as usize - table.first) * delays.len() + j]
                    };
                    assert_eq!(stored, spread(tau, d, sigma), "d={d} sigma={sigma} tau={tau}");
                }
            }
        }
    }

    #[test]
    fn zero_delay_arrives_next_step() {
        let table = SpreadTable::new(&[0.0, 0.0], 0.0);
        let mut buf = SchedulingBuffer::new(1, 2, 4).unwrap();
        buf.schedule(&[1.0, 0.0], &table).unwrap();
        assert_eq!(buf.pop_current(), vec![1.0, 0.0]);
        assert_eq!(buf.pop_current(), vec![0.0, 0.0]);
    }

    #[test]
    fn fractional_delay_splits_across_slots() {
        let table = SpreadTable::new(&[2.3], 0.0);
        let mut buf = SchedulingBuffer::new(1, 1, 6).unwrap();
        buf.schedule(&[1.0], &table).unwrap();
        let popped: Vec<f64> = (0..5).map(|_| buf.pop_current()[0]).collect();
        assert_eq!(popped[0], 0.0);
        assert_eq!(popped[1], 0.0);
        assert!((popped[2] - 0.7).abs() < TOL);
        assert!((popped[3] - 0.3).abs() < TOL);
        assert_eq!(popped[4], 0.0);
    }

    #[test]
    fn pop_zeroes_and_wraps() {
        let mut buf = SchedulingBuffer::new(1, 1, 3).unwrap();
        assert_eq!(buf.pop_current(), vec![0.0]);
        let table = SpreadTable::new(&[1.0], 0.0);
        buf.schedule(&[2.0], &table).unwrap();
        assert_eq!(buf.pop_current(), vec![0.0]);
        assert_eq!(buf.pop_current(), vec![2.0]);
        assert!(buf.is_empty());
        assert_eq!(buf.head(), 0);
        buf.schedule(&[0.0], &table).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn oversize_support_is_an_error() {
        let table = SpreadTable::new(&[6.0], 0.0);
        let mut buf = SchedulingBuffer::new(1, 1, 4).unwrap();
        assert!(matches!(
            buf.schedule(&[1.0], &table),
            Err(Error::BufferTooShort { .. })
        ));
        let wide = SpreadTable::new(&[64.0], 10.36);
        assert!(wide.last() <= SchedulingBuffer::required_len(64, 10.36));
    }

    #[test]
    fn anneal_table_values() {
        let shd = SpreadConfig::new(10.36, 0.971).unwrap().anneal();
        assert!((shd.sigma - 10.36 * 0.971).abs() < TOL);
        assert!((shd.sigma - 10.06).abs() < 5e-3);
        let ssc = SpreadConfig::new(10.0, 0.95).unwrap().anneal();
        assert!((ssc.sigma - 9.5).abs() < TOL);
        let mut tiny = SpreadConfig::new(0.0105, 0.9).unwrap();
        tiny = tiny.anneal();
        assert_eq!(tiny.sigma, 0.0);
        assert_eq!(tiny.anneal().sigma, 0.0);
        assert!(SpreadConfig::new(1.0, 1.0).is_err());
    }

    #[test]
    fn rounding() {
        let d = DelayVector {
            values: vec![2.3, 2.5, 4.0, 0.49],
            d_max: 10,
            trainable: true,
        };
        let r = d.round_for_inference();
        assert_eq!(r.values, vec![2.0, 3.0, 4.0, 0.0]);
        assert!(!r.trainable);
    }

    #[test]
    fn stats() {
        let s = delay_stats(&DelayVector::constant(7, 5.0, 10, false)).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (5.0, 0.0, 5, 5));
        let s = delay_stats(&DelayVector {
            values: vec![0.0, 10.0],
            d_max: 10,
            trainable: false,
        })
        .unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (5.0, 5.0, 0, 10));
        assert!(DelayStats::HEADER.contains("Mean\tStd\tRange"));
        assert_eq!(s.row(1), "1\t5.00\t5.00\t[0, 10]");
        assert!(matches!(
            delay_stats(&DelayVector::constant(0, 0.0, 1, false)),
            Err(Error::EmptyDelays)
        ));
    }

    #[test]
    fn init_respects_cap() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for init in [DelayInit::default(), DelayInit::Uniform] {
            let d = DelayVector::init(500, 16, init, &mut rng);
            assert!(d.values.iter().all(|&v| (0.0..=16.0).contains(&v)));
        }
    }

    proptest! {
        #[test]
        fn unit_mass_at_zero_width(d in 0.0f64..100.0) {
            let sum: f64 = (-2..110).map(|t| spread(t, d, 0.0)).sum();
            prop_assert!((sum - 1.0).abs() < TOL);
        }

        #[test]
        fn support_and_nonnegativity(d in 0.0f64..50.0, sigma in 0.0f64..12.0, tau in -20i64..80) {
            let h = spread(tau, d, sigma);
            prop_assert!(h >= 0.0);
            if (tau as f64 - (1.0 + d)).abs() >= 1.0 + sigma {
                prop_assert_eq!(h, 0.0);
            }
        }

        #[test]
        fn gradient_matches_central_differences(d in 0.0f64..30.0, sigma in 0.0f64..6.0, tau in 0i64..40) {
            prop_assume!(kink_distance(d, sigma) >= 1e-3);
            let eps = 1e-6;
            let fd = (spread(tau, d + eps, sigma) - spread(tau, d - eps, sigma)) / (2.0 * eps);
            prop_assert!((fd - spread_grad_d(tau, d, sigma)).abs() < 1e-8);
        }

        #[test]
        fn anneal_is_monotone(init in 0.0f64..20.0, decay in 0.5f64..0.999) {
            let mut cfg = SpreadConfig::new(init, decay).unwrap();
            for _ in 0..10_000 {
                let next = cfg.anneal();
                prop_assert!(next.sigma <= cfg.sigma);
                prop_assert!(next.sigma == 0.0 || next.sigma >= next.sigma_floor);
                cfg = next;
            }
            prop_assert_eq!(cfg.sigma, 0.0);
        }
    }
}
