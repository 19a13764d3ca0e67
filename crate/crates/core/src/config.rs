//! Complete run configurations and the shipped presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{read_event_file, BinningConfig, IntervalTask, SplitKind};
use crate::delay::DelayInit;
use crate::error::{invalid, Result};
use crate::network::{NetworkConfig, ReadoutMode};
use crate::neuron::ResetMode;
use crate::recurrent::KernelKind;
use crate::train::{Ablation, Dataset, OptimConfig, OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Shd,
    Ssc,
    Interval,
}

/// Generated interval-task splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub channels: usize,
    pub lag_a: usize,
    pub lag_b: usize,
    pub train_samples: usize,
    pub valid_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl SyntheticData {
    /// Task parameters of one split; each split draws from its own stream.
    pub fn task(&self, time_steps: usize, samples: usize, split: u64) -> IntervalTask {
        IntervalTask {
            samples,
            time_steps,
            channels: self.channels,
            lag_a: self.lag_a,
            lag_b: self.lag_b,
            seed: self.seed.wrapping_mul(1000).wrapping_add(split),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: Option<SyntheticData>,
    pub raw_channels: usize,
    pub binning: Option<BinningConfig>,
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Option<Dataset>,
    pub valid: Option<Dataset>,
    pub test: Option<Dataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    /// Seed of the model initialization.
    pub model_seed: u64,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Shd => Self::speech(
                20,
                100,
                OptimConfig {
                    kind: OptimizerKind::AdamW,
                    lr_weights: 0.0013,
                    lr_delays: 0.0279,
                    ..OptimConfig::default()
                },
                (0.44, 0.26),
                1.17,
                (10.36, 0.971),
                ResetMode::Hard,
            ),
            Preset::Ssc => Self::speech(
                35,
                250,
                OptimConfig {
                    kind: OptimizerKind::Adam,
                    lr_weights: 0.001,
                    lr_delays: 0.05,
                    ..OptimConfig::default()
                },
                (0.1, 0.3),
                2.0,
                (10.0, 0.95),
                ResetMode::Soft,
            ),
            Preset::Interval => Self::interval(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn speech(
        classes: usize,
        time_steps: usize,
        optimizer: OptimConfig,
        dropout: (f64, f64),
        tau: f64,
        sigma: (f64, f64),
        reset: ResetMode,
    ) -> Self {
        let mut network = NetworkConfig::uniform(140, classes, 2, 256, KernelKind::Conv, 3);
        network.tau = tau;
        network.reset = reset;
        network.d_max = 80;
        for layer in &mut network.layers {
            layer.dropout_ff = dropout.0;
            layer.dropout_rec = dropout.1;
        }
        Self {
            data: DataConfig {
                raw_channels: 700,
                binning: Some(BinningConfig::new(time_steps, 5, false)),
                ..DataConfig::default()
            },
            network,
            training: TrainConfig {
                optimizer,
                epochs: 150,
                batch_size: 128,
                sigma_init: sigma.0,
                sigma_decay: sigma.1,
                ablation: Ablation::Learnable,
                seed: 0,
            },
            model_seed: 0,
        }
    }

    fn interval() -> Self {
        let time_steps = 50;
        let channels = 16;
        let mut network = NetworkConfig::uniform(channels, 2, 2, 32, KernelKind::Conv, 3);
        network.d_max = 16;
        network.delay_init = DelayInit::Uniform;
        network.readout = ReadoutMode::Last;
        for layer in &mut network.layers {
            layer.dropout_ff = 0.1;
            layer.dropout_rec = 0.1;
        }
        Self {
            data: DataConfig {
                synthetic: Some(SyntheticData {
                    channels,
                    lag_a: 3,
                    lag_b: 12,
                    train_samples: 256,
                    valid_samples: 64,
                    test_samples: 200,
                    seed: 0,
                }),
                raw_channels: channels,
                binning: Some(BinningConfig::new(time_steps, 1, true)),
                ..DataConfig::default()
            },
            network,
            training: TrainConfig {
                optimizer: OptimConfig {
                    kind: OptimizerKind::Adam,
                    lr_weights: 0.01,
                    lr_delays: 0.05,
                    ..OptimConfig::default()
                },
                epochs: 60,
                batch_size: 16,
                sigma_init: 4.0,
                sigma_decay: 0.9,
                ablation: Ablation::Learnable,
                seed: 0,
            },
            model_seed: 0,
        }
    }

    pub fn binning(&self) -> BinningConfig {
        self.data.binning.unwrap_or_else(|| BinningConfig::new(100, 1, false))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.training.validate()?;
        let binning = self.binning();
        if binning.time_steps == 0 {
            return Err(invalid("time_steps", "must be at least 1"));
        }
        if self.data.raw_channels > 0 {
            let c = binning.output_channels(self.data.raw_channels)?;
            if c != self.network.input_channels {
                return Err(invalid(
                    "input_channels",
                    format!("binning yields {c} channels, network expects {}", self.network.input_channels),
                ));
            }
        }
        if let Some(s) = &self.data.synthetic {
            if s.channels != self.data.raw_channels {
                return Err(invalid("raw_channels", "must equal the synthetic channel count"));
            }
            if self.network.classes < 2 {
                return Err(invalid("classes", "the interval task has two classes"));
            }
            s.task(binning.time_steps, 0, 0).generate(SplitKind::Train)?;
        }
        Ok(())
    }

    /// Binned splits, read from the configured files or generated.
    pub fn load_splits(&self) -> Result<Splits> {
        let binning = self.binning();
        if let Some(syn) = &self.data.synthetic {
            let make = |samples: usize, split: u64, kind: SplitKind| -> Result<Option<Dataset>> {
                if samples == 0 {
                    return Ok(None);
                }
                let data = syn.task(binning.time_steps, samples, split).generate(kind)?;
                Dataset::from_split(&data, &binning).map(Some)
            };
            return Ok(Splits {
                train: make(syn.train_samples, 0, SplitKind::Train)?,
                valid: make(syn.valid_samples, 1, SplitKind::Valid)?,
                test: make(syn.test_samples, 2, SplitKind::Test)?,
            });
        }
        let read = |path: &Option<PathBuf>, kind: SplitKind| -> Result<Option<Dataset>> {
            match path {
                Some(p) => Dataset::from_split(&read_event_file(p, kind)?, &binning).map(Some),
                None => Ok(None),
            }
        };
        Ok(Splits {
            train: read(&self.data.train, SplitKind::Train)?,
            valid: read(&self.data.valid, SplitKind::Valid)?,
            test: read(&self.data.test, SplitKind::Test)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
