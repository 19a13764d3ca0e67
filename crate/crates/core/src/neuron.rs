//! Leaky integrate-and-fire dynamics, the spike nonlinearity with its
//! arctangent surrogate, and the non-spiking readout integrator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    /// `V = H (1 - S)`
    Hard,
    /// `V = H - V_th S`
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau: f64,
    pub v_th: f64,
    pub reset: ResetMode,
    pub beta: f64,
}

impl LifParams {
    pub fn new(tau: f64, v_th: f64, reset: ResetMode) -> Result<Self> {
        if !(tau > 1.0 && tau.is_finite()) {
            return Err(invalid("tau", format!("membrane time constant must be > 1, got {tau}")));
        }
        if !(v_th > 0.0) {
            return Err(invalid("v_th", format!("threshold must be > 0, got {v_th}")));
        }
        Ok(Self {
            tau,
            v_th,
            reset,
            beta: 1.0 - 1.0 / tau,
        })
    }

    /// Readout neuron: same leak, infinite threshold, never resets.
    pub fn readout(tau: f64) -> Result<Self> {
        let mut p = Self::new(tau, 1.0, ResetMode::Hard)?;
        p.v_th = f64::INFINITY;
        Ok(p)
    }

    pub fn is_readout(&self) -> bool {
        self.v_th.is_infinite()
    }

    #[inline]
    pub fn integrate(&self, v_prev: f64, current: f64) -> f64 {
        self.beta * v_prev + (1.0 - self.beta) * current
    }

    /// Post-spike potential. `reset` is the (binary) spike that triggers the
    /// reset; the backward pass treats it as a constant.
    #[inline]
    pub fn reset(&self, h: f64, reset: f64) -> f64 {
        match self.reset {
            ResetMode::Hard => h * (1.0 - reset),
            ResetMode::Soft => h - self.v_th * reset,
        }
    }

    /// `dV/dH` with the reset spike detached.
    #[inline]
    pub fn reset_grad(&self, reset: f64) -> f64 {
        match self.reset {
            ResetMode::Hard => 1.0 - reset,
            ResetMode::Soft => 1.0,
        }
    }
}

/// Heaviside step with `Θ(0) = 1`.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Arctangent surrogate of the spike nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    pub alpha: f64,
}

impl Default for Surrogate {
    fn default() -> Self {
        Self { alpha: 2.0 }
    }
}

impl Surrogate {
    /// `g(x) = alpha / (2 (1 + (pi alpha x / 2)^2))`
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        let u = PI * self.alpha * x / 2.0;
        self.alpha / (2.0 * (1.0 + u * u))
    }

    /// Smooth step whose derivative is [`Surrogate::grad`]. Used as the
    /// forward of the smoothed network in gradient checks.
    #[inline]
    pub fn primitive(&self, x: f64) -> f64 {
        0.5 + (PI * self.alpha * x / 2.0).atan() / PI
    }
}

/// Elementwise spike function.
pub fn spike_fn(h: &[f64], v_th: f64) -> Vec<f64> {
    h.iter().map(|&x| heaviside(x - v_th)).collect()
}

/// Backward of [`spike_fn`]: incoming gradient times the surrogate derivative.
pub fn spike_fn_backward(h: &[f64], v_th: f64, grad_out: &[f64], surrogate: &Surrogate) -> Vec<f64> {
    h.iter()
        .zip(grad_out)
        .map(|(&x, &g)| g * surrogate.grad(x - v_th))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub batch: usize,
    pub neurons: usize,
    /// Membrane potential after reset.
    pub v: Vec<f64>,
    /// Hidden state before reset.
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    /// Number of steps taken.
    pub step: usize,
}

impl LifState {
    pub fn new(batch: usize, neurons: usize) -> Self {
        let n = batch * neurons;
        Self {
            batch,
            neurons,
            v: vec![0.0; n],
            h: vec![0.0; n],
            s: vec![0.0; n],
            step: 0,
        }
    }
}

pub fn lif_step(state: &mut LifState, input: &[f64], params: &LifParams) -> Result<()> {
    if input.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "input current has {} values, state has {}",
            input.len(),
            state.v.len()
        )));
    }
    let mut finite = true;
    for i in 0..input.len() {
        let h = params.integrate(state.v[i], input[i]);
        let s = heaviside(h - params.v_th);
        state.h[i] = h;
        state.s[i] = s;
        state.v[i] = params.reset(h, s);
        finite &= h.is_finite();
    }
    let t = state.step;
    state.step += 1;
    if !finite {
        return Err(Error::NonFinite { layer: 0, t });
    }
    Ok(())
}

/// One step of the leaky-integrator readout: `H` follows the LIF charge
/// equation, no spike is ever emitted and `V == H`.
pub fn readout_step(state: &mut LifState, input: &[f64], params: &LifParams) -> Result<()> {
    if !params.is_readout() {
        return Err(invalid("v_th", "readout requires the infinite-threshold flag"));
    }
    if input.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "input current has {} values, state has {}",
            input.len(),
            state.v.len()
        )));
    }
    for i in 0..input.len() {
        let h = params.integrate(state.v[i], input[i]);
        state.h[i] = h;
        state.v[i] = h;
        state.s[i] = 0.0;
    }
    state.step += 1;
    Ok(())
}
