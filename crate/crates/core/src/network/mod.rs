//! Hidden layers (feedforward projection, batch norm, LIF, recurrent delay
//! unit, dropout) stacked under a leaky-integrator readout.

mod batchnorm;
mod forward;
mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use batchnorm::{BatchNorm, BnCache};
pub use forward::{LayerTape, Mode, RunOptions, RunOutput, SpikeMode, Tape};
pub use io::{load_model, save_model, LoadOptions, MODEL_MAGIC, MODEL_VERSION};

use crate::delay::{DelayInit, DelayVector};
use crate::error::{invalid, Result};
use crate::neuron::{LifParams, ResetMode, Surrogate};
use crate::recurrent::{init_kernel_with, KernelKind, RecurrentKernel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DelayMode {
    Learnable,
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub neurons: usize,
    pub kernel: KernelKind,
    pub kernel_size: usize,
    pub delays: DelayMode,
    pub dropout_ff: f64,
    pub dropout_rec: f64,
    pub batchnorm: bool,
}

impl LayerConfig {
    pub fn new(neurons: usize, kernel: KernelKind, kernel_size: usize) -> Self {
        Self {
            neurons,
            kernel,
            kernel_size,
            delays: DelayMode::Learnable,
            dropout_ff: 0.0,
            dropout_rec: 0.0,
            batchnorm: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    /// Membrane potential at the last step.
    #[default]
    Last,
    /// Sum of the membrane potential over all steps.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub classes: usize,
    pub layers: Vec<LayerConfig>,
    pub tau: f64,
    pub v_th: f64,
    pub reset: ResetMode,
    pub surrogate_alpha: f64,
    pub d_max: u32,
    pub delay_init: DelayInit,
    pub readout: ReadoutMode,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl NetworkConfig {
    /// `depth` identical hidden layers of `neurons` units.
    pub fn uniform(
        input_channels: usize,
        classes: usize,
        depth: usize,
        neurons: usize,
        kernel: KernelKind,
        kernel_size: usize,
    ) -> Self {
        Self {
            input_channels,
            classes,
            layers: vec![LayerConfig::new(neurons, kernel, kernel_size); depth],
            tau: 2.0,
            v_th: 1.0,
            reset: ResetMode::Hard,
            surrogate_alpha: 2.0,
            d_max: 64,
            delay_init: DelayInit::default(),
            readout: ReadoutMode::Last,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(invalid("input_channels", "must be positive"));
        }
        if self.classes == 0 {
            return Err(invalid("classes", "must be positive"));
        }
        if self.layers.is_empty() {
            return Err(invalid("layers", "need at least one hidden layer"));
        }
        LifParams::new(self.tau, self.v_th, self.reset)?;
        if !(self.surrogate_alpha > 0.0 && self.surrogate_alpha.is_finite()) {
            return Err(invalid("surrogate_alpha", "must be finite and > 0"));
        }
        if !(self.bn_eps > 0.0) {
            return Err(invalid("bn_eps", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(invalid("bn_momentum", "must lie in [0, 1]"));
        }
        for layer in &self.layers {
            if layer.neurons == 0 {
                return Err(invalid("neurons", "must be positive"));
            }
            if layer.kernel == KernelKind::Conv && layer.kernel_size % 2 == 0 {
                return Err(invalid("kernel_size", format!("must be odd, got {}", layer.kernel_size)));
            }
            for (name, p) in [("dropout_ff", layer.dropout_ff), ("dropout_rec", layer.dropout_rec)] {
                if !(0.0..1.0).contains(&p) {
                    return Err(invalid(name, format!("must lie in [0, 1), got {p}")));
                }
            }
            if let DelayMode::Fixed { value } = layer.delays {
                if !(0.0..=self.d_max as f64).contains(&value) {
                    return Err(invalid("delay", format!("fixed delay {value} outside [0, d_max]")));
                }
            }
        }
        Ok(())
    }

    pub fn lif(&self) -> LifParams {
        LifParams::new(self.tau, self.v_th, self.reset).expect("validated config")
    }

    pub fn readout_lif(&self) -> LifParams {
        LifParams::readout(self.tau).expect("validated config")
    }

    pub fn surrogate(&self) -> Surrogate {
        Surrogate {
            alpha: self.surrogate_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    pub config: LayerConfig,
    pub n_in: usize,
    /// Row-major `(n_in, neurons)`.
    pub w_ff: Vec<f64>,
    pub bn: Option<BatchNorm>,
    pub kernel: RecurrentKernel,
    pub delays: DelayVector,
}

impl HiddenLayer {
    pub fn neurons(&self) -> usize {
        self.config.neurons
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub n_in: usize,
    pub classes: usize,
    /// Row-major `(n_in, classes)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub config: NetworkConfig,
    pub layers: Vec<HiddenLayer>,
    pub readout: Readout,
    pub mode: Mode,
    /// Spread width used by train-mode forwards.
    pub sigma: f64,
    rng: ChaCha8Rng,
}

fn uniform_vec<R: Rng>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl NetworkModel {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(config.layers.len());
        let mut n_in = config.input_channels;
        for lc in &config.layers {
            let n = lc.neurons;
            let w_ff = uniform_vec(n_in * n, 1.0 / (n_in as f64).sqrt(), &mut rng);
            let kernel = init_kernel_with(lc.kernel, n, lc.kernel_size, &mut rng)?;
            let delays = match lc.delays {
                DelayMode::Learnable => DelayVector::init(n, config.d_max, config.delay_init, &mut rng),
                DelayMode::Fixed { value } => DelayVector::constant(n, value, config.d_max, false),
            };
            let bn = lc
                .batchnorm
                .then(|| BatchNorm::new(n, config.bn_momentum, config.bn_eps));
            layers.push(HiddenLayer {
                config: lc.clone(),
                n_in,
                w_ff,
                bn,
                kernel,
                delays,
            });
            n_in = n;
        }
        let bound = 1.0 / (n_in as f64).sqrt();
        let readout = Readout {
            n_in,
            classes: config.classes,
            weights: uniform_vec(n_in * config.classes, bound, &mut rng),
            bias: uniform_vec(config.classes, bound, &mut rng),
        };
        Ok(Self {
            config,
            layers,
            readout,
            mode: Mode::Train,
            sigma: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d40f),
        })
    }

    pub(crate) fn from_parts(config: NetworkConfig, layers: Vec<HiddenLayer>, readout: Readout, sigma: f64) -> Self {
        Self {
            config,
            layers,
            readout,
            mode: Mode::Eval,
            sigma,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Restarts the dropout stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Replaces every hidden layer's delays by a frozen constant.
    pub fn freeze_delays(&mut self, value: f64) {
        for layer in &mut self.layers {
            layer.delays = DelayVector::constant(layer.neurons(), value, layer.delays.d_max, false);
        }
    }

    /// Swaps every conv kernel for its banded dense equivalent.
    pub fn to_banded_dense(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            layer.kernel = layer.kernel.banded(layer.config.neurons);
            layer.config.kernel = KernelKind::Dense;
        }
        for lc in &mut out.config.layers {
            lc.kernel = KernelKind::Dense;
        }
        out
    }

    /// Every parameter tensor in a fixed order shared with
    /// [`Gradients`](crate::train::Gradients).
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut slots = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            slots.push(ParamSlot::new(format!("layer{l}.w_ff"), ParamGroup::Feedforward, true, &mut layer.w_ff));
            if let Some(bn) = &mut layer.bn {
                slots.push(ParamSlot::new(format!("layer{l}.bn.gamma"), ParamGroup::BatchNorm, true, &mut bn.gamma));
                slots.push(ParamSlot::new(format!("layer{l}.bn.beta"), ParamGroup::BatchNorm, true, &mut bn.beta));
            }
            slots.push(ParamSlot::new(
                format!("layer{l}.w_rec"),
                ParamGroup::Recurrent,
                true,
                layer.kernel.weights_mut(),
            ));
            let trainable = layer.delays.trainable;
            slots.push(ParamSlot::new(
                format!("layer{l}.delays"),
                ParamGroup::Delays,
                trainable,
                &mut layer.delays.values,
            ));
        }
        slots.push(ParamSlot::new("readout.w".into(), ParamGroup::Readout, true, &mut self.readout.weights));
        slots.push(ParamSlot::new("readout.b".into(), ParamGroup::Readout, true, &mut self.readout.bias));
        slots
    }

    pub fn clamp_delays(&mut self) {
        for layer in &mut self.layers {
            layer.delays.clamp();
        }
    }

    pub fn count_params(&self) -> ParamCounts {
        let mut counts = ParamCounts::default();
        for layer in &self.layers {
            let rec = layer.kernel.weights().len();
            counts.feedforward += layer.w_ff.len();
            counts.recurrent_weights += rec;
            counts.delays += layer.delays.len();
            counts.batchnorm += layer.bn.as_ref().map_or(0, |bn| 2 * bn.features());
            counts.per_layer.push(LayerParamCounts {
                recurrent_weights: rec,
                delays: layer.delays.len(),
            });
        }
        counts.readout = self.readout.weights.len() + self.readout.bias.len();
        counts.total = counts.feedforward + counts.recurrent_weights + counts.delays + counts.batchnorm + counts.readout;
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Feedforward,
    BatchNorm,
    Recurrent,
    Delays,
    Readout,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Feedforward,
        ParamGroup::BatchNorm,
        ParamGroup::Recurrent,
        ParamGroup::Delays,
        ParamGroup::Readout,
    ];
}

pub struct ParamSlot<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub values: &'a mut [f64],
}

impl<'a> ParamSlot<'a> {
    fn new(name: String, group: ParamGroup, trainable: bool, values: &'a mut [f64]) -> Self {
        Self {
            name,
            group,
            trainable,
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerParamCounts {
    pub recurrent_weights: usize,
    pub delays: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamCounts {
    pub feedforward: usize,
    pub recurrent_weights: usize,
    pub delays: usize,
    pub batchnorm: usize,
    pub readout: usize,
    pub total: usize,
    pub per_layer: Vec<LayerParamCounts>,
}
