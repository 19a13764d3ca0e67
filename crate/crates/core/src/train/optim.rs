use serde::{Deserialize, Serialize};

use super::Gradients;
use crate::error::{invalid, Error, Result};
use crate::network::{NetworkModel, ParamGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Adam with decoupled weight decay on the weight group.
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr_weights: f64,
    pub lr_delays: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr_weights: 1e-3,
            lr_delays: 1e-2,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_weights", self.lr_weights), ("lr_delays", self.lr_delays)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(name, format!("must be > 0, got {lr}")));
            }
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(invalid("betas", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("eps", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(invalid("weight_decay", "must be >= 0"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam moments for every parameter tensor of one model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    steps: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update of every trainable tensor; delays are clamped afterwards.
    pub fn step(&mut self, model: &mut NetworkModel, grads: &Gradients) -> Result<()> {
        let cfg = self.config;
        let slots = model.params_mut();
        if slots.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradient tensors for {} parameter tensors",
                grads.len(),
                slots.len()
            )));
        }
        if self.m.is_empty() {
            self.m = slots.iter().map(|s| vec![0.0; s.values.len()]).collect();
            self.v = self.m.clone();
        }
        self.steps += 1;
        let (b1, b2) = cfg.betas;
        let bc1 = 1.0 - b1.powi(self.steps);
        let bc2 = 1.0 - b2.powi(self.steps);
        for (k, (slot, g)) in slots.into_iter().zip(&grads.entries).enumerate() {
            if slot.name != g.name || slot.values.len() != g.values.len() {
                return Err(Error::Shape(format!("gradient `{}` does not match `{}`", g.name, slot.name)));
            }
            if !slot.trainable {
                continue;
            }
            let is_delay = slot.group == ParamGroup::Delays;
            let lr = if is_delay { cfg.lr_delays } else { cfg.lr_weights };
            let decay = match cfg.kind {
                OptimizerKind::AdamW if !is_delay => 1.0 - lr * cfg.weight_decay,
                _ => 1.0,
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..slot.values.len() {
                let gi = g.values[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let p = &mut slot.values[i];
                *p *= decay;
                *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            }
        }
        model.clamp_delays();
        Ok(())
    }
}
