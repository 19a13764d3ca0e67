//! Recurrent spiking neural networks with learnable axonal delays.
//!
//! The recurrent path of every hidden layer is either a dense `N x N` matrix
//! or a length-`k` kernel applied as a cross-correlation along the neuron
//! axis. Spikes are spread over future time steps by a triangular kernel
//! centred on `1 + d_j` and accumulated in a circular scheduling buffer, which
//! makes the per-neuron delays `d_j` differentiable. Training is full-length
//! backpropagation through time with an arctangent surrogate gradient.

pub mod bench;
pub mod config;
pub mod data;
pub mod delay;
pub mod error;
pub mod network;
pub mod neuron;
pub mod recurrent;
pub mod train;

pub use error::{Error, Result};
