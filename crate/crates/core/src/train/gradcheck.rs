//! Central finite differences against [`backward`](super::backward).
//!
//! The forward pass is made smooth by emitting the surrogate's primitive in
//! place of each hard spike and by freezing the reset masks of a baseline
//! run, so the analytic gradient is the exact derivative of the probed
//! function. Dropout masks are reproduced by reseeding before every run.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, loss_ce, loss_ce_grad};
use crate::data::SpikeTensor;
use crate::delay::{kink_distance, DelayInit};
use crate::error::{invalid, Result};
use crate::network::{Mode, NetworkConfig, NetworkModel, ParamGroup, RunOptions, SpikeMode};
use crate::recurrent::KernelKind;

/// Coordinates closer than this to a kink of the spread are not probed.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub input_channels: usize,
    pub classes: usize,
    pub layers: usize,
    pub neurons: usize,
    pub time: usize,
    pub batch: usize,
    pub kernel: KernelKind,
    pub kernel_size: usize,
    pub sigma: f64,
    pub d_max: u32,
    pub dropout: f64,
    pub input_density: f64,
    pub step: f64,
    /// Coordinates probed per group; larger groups are subsampled.
    pub max_coords: usize,
    pub tol_weights: f64,
    pub tol_delays: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            input_channels: 6,
            classes: 3,
            layers: 2,
            neurons: 8,
            time: 20,
            batch: 2,
            kernel: KernelKind::Conv,
            kernel_size: 3,
            sigma: 1.5,
            d_max: 8,
            dropout: 0.1,
            input_density: 0.3,
            step: 1e-5,
            max_coords: 256,
            tol_weights: 1e-4,
            tol_delays: 1e-3,
            seed: 0,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 || self.neurons > 16 {
            return Err(invalid("neurons", "grad check needs 1..=16 neurons"));
        }
        if self.time == 0 || self.time > 25 {
            return Err(invalid("time", "grad check needs 1..=25 steps"));
        }
        if !(self.step > 0.0) {
            return Err(invalid("step", "must be > 0"));
        }
        if !(self.sigma >= 0.0) {
            return Err(invalid("sigma", "must be >= 0"));
        }
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        let mut net = NetworkConfig::uniform(
            self.input_channels,
            self.classes,
            self.layers,
            self.neurons,
            self.kernel,
            self.kernel_size,
        );
        net.d_max = self.d_max;
        net.delay_init = DelayInit::Uniform;
        for layer in &mut net.layers {
            layer.dropout_ff = self.dropout;
            layer.dropout_rec = self.dropout;
        }
        net
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: ParamGroup,
    pub checked: usize,
    /// Coordinates excluded for sitting near a kink.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Set when the whole group was not probed.
    pub skipped: Option<String>,
}

impl GroupCheck {
    pub fn passed(&self) -> bool {
        self.skipped.is_some() || self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub sigma: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupCheck::passed)
    }

    pub fn group(&self, group: ParamGroup) -> Option<&GroupCheck> {
        self.groups.iter().find(|g| g.group == group)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

/// Builds a random model and input from `cfg` and checks every group.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    cfg.validate()?;
    let mut model = NetworkModel::new(cfg.network(), cfg.seed)?;
    model.sigma = cfg.sigma;
    let input = SpikeTensor::random(cfg.batch, cfg.time, cfg.input_channels, cfg.input_density, cfg.seed ^ 0xa5a5);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x1abe1);
    let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..cfg.classes)).collect();
    check_model(&mut model, &input, &labels, cfg)
}

/// Checks the gradient of the mean cross-entropy of `model` on one batch.
pub fn check_model(
    model: &mut NetworkModel,
    input: &SpikeTensor,
    labels: &[usize],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let dropout_seed = cfg.seed ^ 0xd40f;
    let classes = model.config.classes;
    let base_opts = RunOptions {
        mode: Mode::Train,
        spikes: SpikeMode::Smooth,
        record: true,
        update_stats: false,
        frozen_resets: None,
    };
    model.reseed(dropout_seed);
    let base = model.run(input, &base_opts)?;
    let tape = base.tape.expect("recorded");
    let out = loss_ce_grad(&base.logits, labels, classes)?;
    let grads = backward(model, &tape, &out.grad)?;

    let probe_opts = RunOptions {
        record: false,
        frozen_resets: Some(tape.resets()),
        ..base_opts
    };
    let loss_at = |m: &mut NetworkModel| -> Result<f64> {
        m.reseed(dropout_seed);
        let logits = m.run(input, &probe_opts)?.logits;
        loss_ce(&logits, labels, classes)
    };

    let sigma = model.sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc00d);
    let mut groups = Vec::new();
    for group in ParamGroup::ALL {
        let tolerance = if group == ParamGroup::Delays {
            cfg.tol_delays
        } else {
            cfg.tol_weights
        };
        let mut result = GroupCheck {
            group,
            checked: 0,
            excluded: 0,
            max_rel_error: 0.0,
            tolerance,
            skipped: None,
        };
        if group == ParamGroup::Delays && sigma == 0.0 {
            result.skipped = Some("sigma = 0: every delay sits on a kink".into());
            groups.push(result);
            continue;
        }

        // (tensor index, coordinate) pairs belonging to the group.
        let coords: Vec<(usize, usize)> = grads
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group)
            .flat_map(|(k, e)| (0..e.values.len()).map(move |i| (k, i)))
            .collect();
        if coords.is_empty() {
            result.skipped = Some("no parameters".into());
            groups.push(result);
            continue;
        }
        let picked: Vec<(usize, usize)> = if coords.len() > cfg.max_coords {
            let mut idx = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        } else {
            coords
        };

        for (k, i) in picked {
            let original = model.params_mut()[k].values[i];
            if group == ParamGroup::Delays && kink_distance(original, sigma) < KINK_MARGIN {
                result.excluded += 1;
                continue;
            }
            model.params_mut()[k].values[i] = original + cfg.step;
            let plus = loss_at(model)?;
            model.params_mut()[k].values[i] = original - cfg.step;
            let minus = loss_at(model)?;
            model.params_mut()[k].values[i] = original;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = relative_error(grads.entries[k].values[i], numeric);
            result.max_rel_error = result.max_rel_error.max(err);
            result.checked += 1;
        }
        groups.push(result);
    }
    Ok(GradCheckReport { sigma, groups })
}
