//! Spike-event datasets: the binary event file, binning into dense spike
//! tensors, batching, and the synthetic interval-discrimination task.
//!
//! Event file layout (little-endian):
//!
//! ```text
//! "SPKE" | u16 version=1 | u32 C_raw | u32 N_c | u32 n_samples
//! per sample: u32 label | u64 duration_us | u32 n_events
//!             n_events x (u64 time_us | u32 channel)
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const EVENT_MAGIC: &[u8; 4] = b"SPKE";
pub const EVENT_VERSION: u16 = 1;

/// Steps covered by one burst of the interval task.
pub const BURST_STEPS: usize = 2;
/// Adjacent channels covered by one burst of the interval task.
pub const BURST_CHANNELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpikeEvent {
    pub time_us: u64,
    pub channel: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub label: u32,
    pub duration_us: u64,
    pub events: Vec<SpikeEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

/// One split of an event dataset together with the header values it was
/// stored under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    /// Raw channel count `C_raw` (700 for the cochlear datasets).
    pub channels: u32,
    /// Number of classes `N_c`.
    pub classes: u32,
    pub records: Vec<SampleRecord>,
}

impl DatasetSplit {
    pub fn empty(kind: SplitKind, channels: u32, classes: u32) -> Self {
        Self {
            kind,
            channels,
            classes,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks every header invariant on the in-memory records.
    pub fn validate(&self) -> Result<()> {
        for (i, rec) in self.records.iter().enumerate() {
            if rec.label >= self.classes {
                return Err(Error::Label {
                    label: rec.label as usize,
                    classes: self.classes as usize,
                });
            }
            if rec.duration_us == 0 {
                return Err(invalid("duration_us", format!("sample {i} has zero duration")));
            }
            let mut prev = 0u64;
            for ev in &rec.events {
                if ev.channel >= self.channels {
                    return Err(invalid(
                        "channel",
                        format!("sample {i}: channel {} >= {}", ev.channel, self.channels),
                    ));
                }
                if ev.time_us < prev {
                    return Err(invalid("time_us", format!("sample {i}: event times decrease")));
                }
                if ev.time_us > rec.duration_us {
                    return Err(invalid("time_us", format!("sample {i}: event after duration")));
                }
                prev = ev.time_us;
            }
        }
        Ok(())
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes as usize];
        for rec in &self.records {
            counts[rec.label as usize] += 1;
        }
        counts
    }
}

pub fn encode_events(split: &DatasetSplit) -> Result<Vec<u8>> {
    split.validate()?;
    let n_events: usize = split.records.iter().map(|r| r.events.len()).sum();
    let mut out = Vec::with_capacity(18 + split.records.len() * 16 + n_events * 12);
    out.extend_from_slice(EVENT_MAGIC);
    out.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    out.extend_from_slice(&split.channels.to_le_bytes());
    out.extend_from_slice(&split.classes.to_le_bytes());
    out.extend_from_slice(&(split.records.len() as u32).to_le_bytes());
    for rec in &split.records {
        out.extend_from_slice(&rec.label.to_le_bytes());
        out.extend_from_slice(&rec.duration_us.to_le_bytes());
        out.extend_from_slice(&(rec.events.len() as u32).to_le_bytes());
        for ev in &rec.events {
            out.extend_from_slice(&ev.time_us.to_le_bytes());
            out.extend_from_slice(&ev.channel.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_event_file(path: impl AsRef<Path>, split: &DatasetSplit) -> Result<()> {
    let bytes = encode_events(split)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_event_file(path: impl AsRef<Path>, kind: SplitKind) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path)?;
    decode_events(&bytes, kind)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

pub fn decode_events(bytes: &[u8], kind: SplitKind) -> Result<DatasetSplit> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != EVENT_MAGIC {
        return Err(parse_err(0, "bad magic, expected \"SPKE\""));
    }
    let version = cur.u16("version")?;
    if version != EVENT_VERSION {
        return Err(parse_err(4, format!("unsupported version {version}")));
    }
    let channels = cur.u32("C_raw")?;
    let classes = cur.u32("N_c")?;
    if channels == 0 || classes == 0 {
        return Err(parse_err(6, "C_raw and N_c must be positive"));
    }
    let n_samples = cur.u32("n_samples")? as usize;

    let mut records = Vec::with_capacity(n_samples.min(1 << 16));
    for _ in 0..n_samples {
        let at = cur.pos;
        let label = cur.u32("label")?;
        if label >= classes {
            return Err(parse_err(at, format!("label {label} >= N_c {classes}")));
        }
        let at = cur.pos;
        let duration_us = cur.u64("duration_us")?;
        if duration_us == 0 {
            return Err(parse_err(at, "zero sample duration"));
        }
        let n_events = cur.u32("n_events")? as usize;
        let mut events = Vec::with_capacity(n_events.min(1 << 20));
        let mut prev = 0u64;
        for _ in 0..n_events {
            let at = cur.pos;
            let time_us = cur.u64("time_us")?;
            if time_us < prev {
                return Err(parse_err(at, format!("event time {time_us} precedes {prev}")));
            }
            if time_us > duration_us {
                return Err(parse_err(at, format!("event time {time_us} exceeds duration")));
            }
            let at = cur.pos;
            let channel = cur.u32("channel")?;
            if channel >= channels {
                return Err(parse_err(at, format!("channel {channel} >= C_raw {channels}")));
            }
            prev = time_us;
            events.push(SpikeEvent { time_us, channel });
        }
        records.push(SampleRecord {
            label,
            duration_us,
            events,
        });
    }
    if cur.pos != bytes.len() {
        return Err(parse_err(cur.pos, "trailing bytes after last sample"));
    }
    Ok(DatasetSplit {
        kind,
        channels,
        classes,
        records,
    })
}

/// How raw channels inside one frequency bin are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub time_steps: usize,
    pub bin_factor: usize,
    pub binarize: bool,
    #[serde(default)]
    pub pooling: Pooling,
}

impl BinningConfig {
    pub fn new(time_steps: usize, bin_factor: usize, binarize: bool) -> Self {
        Self {
            time_steps,
            bin_factor,
            binarize,
            pooling: Pooling::Sum,
        }
    }

    pub fn output_channels(&self, raw_channels: usize) -> Result<usize> {
        if self.bin_factor == 0 || raw_channels % self.bin_factor != 0 {
            return Err(invalid(
                "bin_factor",
                format!("{} does not divide C_raw={raw_channels}", self.bin_factor),
            ));
        }
        Ok(raw_channels / self.bin_factor)
    }
}

/// Bins one sample into a row-major `(T, C_raw / bin_factor)` slice.
pub fn bin_sample(sample: &SampleRecord, raw_channels: usize, cfg: &BinningConfig) -> Result<Vec<f64>> {
    let t_len = cfg.time_steps;
    if t_len == 0 {
        return Err(invalid("time_steps", "must be at least 1"));
    }
    let c_out = cfg.output_channels(raw_channels)?;
    let time_bin = |time_us: u64| -> usize {
        let idx = (time_us as u128 * t_len as u128) / sample.duration_us.max(1) as u128;
        (idx as usize).min(t_len - 1)
    };

    let mut out = vec![0.0; t_len * c_out];
    match cfg.pooling {
        Pooling::Sum => {
            for ev in &sample.events {
                out[time_bin(ev.time_us) * c_out + ev.channel as usize / cfg.bin_factor] += 1.0;
            }
        }
        Pooling::Max => {
            let mut raw = vec![0.0; t_len * raw_channels];
            for ev in &sample.events {
                raw[time_bin(ev.time_us) * raw_channels + ev.channel as usize] += 1.0;
            }
            for t in 0..t_len {
                for c in 0..c_out {
                    let group = &raw[t * raw_channels + c * cfg.bin_factor..][..cfg.bin_factor];
                    out[t * c_out + c] = group.iter().copied().fold(0.0, f64::max);
                }
            }
        }
    }
    if cfg.binarize {
        for v in &mut out {
            *v = v.min(1.0);
        }
    }
    Ok(out)
}

/// Dense spike activity of shape `(batch, time, channels)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTensor {
    pub batch: usize,
    pub time: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl SpikeTensor {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        Self {
            batch,
            time,
            channels,
            data: vec![0.0; batch * time * channels],
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * time * channels {
            return Err(Error::Shape(format!(
                "spike tensor ({batch}, {time}, {channels}) needs {} values, got {}",
                batch * time * channels,
                data.len()
            )));
        }
        Ok(Self {
            batch,
            time,
            channels,
            data,
        })
    }

    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[(b * self.time + t) * self.channels + c]
    }

    pub fn set(&mut self, b: usize, t: usize, c: usize, value: f64) {
        self.data[(b * self.time + t) * self.channels + c] = value;
    }

    /// The `(T, C)` slice of one batch row.
    pub fn sample(&self, b: usize) -> &[f64] {
        let n = self.time * self.channels;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Bernoulli spike raster, used for benchmarks and property tests.
    pub fn random(batch: usize, time: usize, channels: usize, density: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * time * channels)
            .map(|_| if rng.random::<f64>() < density { 1.0 } else { 0.0 })
            .collect();
        Self {
            batch,
            time,
            channels,
            data,
        }
    }
}

/// A batch of binned samples and their labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: SpikeTensor,
    pub labels: Vec<usize>,
}

pub fn bin_records<'a>(
    records: impl IntoIterator<Item = &'a SampleRecord>,
    raw_channels: usize,
    cfg: &BinningConfig,
) -> Result<Batch> {
    let c_out = cfg.output_channels(raw_channels)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        data.extend(bin_sample(rec, raw_channels, cfg)?);
        labels.push(rec.label as usize);
    }
    let inputs = SpikeTensor::from_vec(labels.len(), cfg.time_steps, c_out, data)?;
    Ok(Batch { inputs, labels })
}

/// Iterates over a split in batches of at most `batch_size` samples. Every
/// sample is visited exactly once; the last batch may be smaller.
pub struct BatchIter<'a> {
    split: &'a DatasetSplit,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    binning: BinningConfig,
}

pub fn batch_iter<'a>(
    split: &'a DatasetSplit,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    binning: BinningConfig,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(invalid("batch_size", "must be at least 1"));
    }
    binning.output_channels(split.channels as usize)?;
    let mut order: Vec<usize> = (0..split.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(BatchIter {
        split,
        order,
        batch_size,
        pos: 0,
        binning,
    })
}

impl BatchIter<'_> {
    /// Sample indices in visiting order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let records = idx.iter().map(|&i| &self.split.records[i]);
        // binning was validated when the iterator was built
        Some(bin_records(records, self.split.channels as usize, &self.binning).unwrap())
    }
}

/// Parameters of the two-class interval-discrimination task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalTask {
    pub samples: usize,
    pub time_steps: usize,
    pub channels: usize,
    pub lag_a: usize,
    pub lag_b: usize,
    pub seed: u64,
}

impl IntervalTask {
    pub const STEP_US: u64 = 1000;

    pub fn generate(&self, kind: SplitKind) -> Result<DatasetSplit> {
        make_interval_task(
            self.samples,
            self.time_steps,
            self.channels,
            self.lag_a,
            self.lag_b,
            self.seed,
            kind,
        )
    }
}

/// Two-class dataset where each sample holds a reference burst at a random
/// onset and an echo burst `lag_a` (class 0) or `lag_b` (class 1) steps later
/// on the same random band of [`BURST_CHANNELS`] adjacent channels. Both
/// classes carry the same number of spikes and the same channel marginals, so
/// only the interval separates them. Labels alternate 0, 1, 0, ...
pub fn make_interval_task(
    n_samples: usize,
    time_steps: usize,
    channels: usize,
    lag_a: usize,
    lag_b: usize,
    seed: u64,
    kind: SplitKind,
) -> Result<DatasetSplit> {
    if !(0 < lag_a && lag_a < lag_b) {
        return Err(invalid("lag", "need 0 < lag_a < lag_b"));
    }
    if lag_b + BURST_STEPS > time_steps {
        return Err(invalid(
            "lag_b",
            format!("echo at lag {lag_b} does not fit in {time_steps} steps"),
        ));
    }
    if lag_a < BURST_STEPS {
        return Err(invalid("lag_a", format!("bursts overlap for lag < {BURST_STEPS}")));
    }
    if channels < BURST_CHANNELS {
        return Err(invalid("channels", format!("need at least {BURST_CHANNELS}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_onset = time_steps - lag_b - BURST_STEPS;
    let records = (0..n_samples)
        .map(|i| {
            let label = (i % 2) as u32;
            let lag = if label == 0 { lag_a } else { lag_b };
            let onset = rng.random_range(0..=max_onset);
            let band = rng.random_range(0..=channels - BURST_CHANNELS);
            let mut events = Vec::with_capacity(2 * BURST_STEPS * BURST_CHANNELS);
            for start in [onset, onset + lag] {
                for step in start..start + BURST_STEPS {
                    for ch in band..band + BURST_CHANNELS {
                        events.push(SpikeEvent {
                            time_us: step as u64 * IntervalTask::STEP_US,
                            channel: ch as u32,
                        });
                    }
                }
            }
            SampleRecord {
                label,
                duration_us: time_steps as u64 * IntervalTask::STEP_US,
                events,
            }
        })
        .collect();
    Ok(DatasetSplit {
        kind,
        channels: channels as u32,
        classes: 2,
        records,
    })
}
