//! Equilibrium Propagation for stochastic spiking convergent recurrent networks.
//!
//! Neurons emit Bernoulli spikes `s = B(σ(ξ))` with a hard-sigmoid rate
//! `σ(ξ) = clamp(κξ, 0, 1)`. Membranes relax under Euler dynamics driven by the
//! spikes of adjacent layers, and weights are learned from the difference of
//! energy gradients between a free and a nudged equilibrium.

pub mod cli;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod neuron;
pub mod oracle;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Network, NetworkState, Params, Topology};
