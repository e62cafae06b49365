//! Finite-difference reference gradient of the fixed-point loss.
//!
//! The loss `½‖ξ*_out − ŷ‖²` is evaluated at the mean-field free-phase fixed
//! point; each weight is perturbed by ±ε and the network re-relaxed (warm
//! started from the unperturbed fixed point).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::expand_label;
use crate::dynamics::{relax_meanfield, PhaseConfig};
use crate::energy::{layer_drives, rates};
use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::model::{Network, NetworkState, Params, Topology};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub epsilon: f64,
    pub relax_steps: usize,
    pub residual_tol: f64,
    pub lambda: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            relax_steps: 20_000,
            residual_tol: 1e-13,
            lambda: 0.5,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.relax_steps == 0 || !(self.residual_tol >= 0.0) {
            return Err(Error::Contract(
                "oracle needs epsilon > 0, relax_steps ≥ 1, residual_tol ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Mean-field free fixed point reached from `init`, or an error if the
/// residual is still above tolerance after `relax_steps`.
pub fn converged_state(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    ocfg: &OracleConfig,
) -> Result<NetworkState> {
    ocfg.validate()?;
    let phase = PhaseConfig::free(ocfg.lambda, ocfg.relax_steps).until(ocfg.residual_tol);
    let fp = relax_meanfield(model, x, init, &phase, None)?;
    if fp.residual > ocfg.residual_tol {
        return Err(Error::OracleUnavailable {
            residual: fp.residual,
            steps: fp.steps_taken,
        });
    }
    Ok(fp.state)
}

fn loss_of(state: &NetworkState, y: &[f64]) -> f64 {
    0.5 * state
        .output()
        .data()
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
}

pub fn loss_at_fixed_point(
    model: &Network,
    x: &[f64],
    y: &[f64],
    ocfg: &OracleConfig,
) -> Result<f64> {
    if y.len() != model.topology.output_len() {
        return Err(Error::Dimension(
            "target does not match output layer".into(),
        ));
    }
    let state = converged_state(model, x, &NetworkState::zeros(&model.topology), ocfg)?;
    Ok(loss_of(&state, y))
}

/// Central differences `(L(w+εe) − L(w−εe)) / 2ε` for every weight.
pub fn fd_gradient(model: &Network, x: &[f64], y: &[f64], ocfg: &OracleConfig) -> Result<Params> {
    if y.len() != model.topology.output_len() {
        return Err(Error::Dimension(
            "target does not match output layer".into(),
        ));
    }
    let base = converged_state(model, x, &NetworkState::zeros(&model.topology), ocfg)?;
    let eps = ocfg.epsilon;
    let coords: Vec<(usize, usize)> = model
        .params
        .0
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len()).map(move |i| (k, i)))
        .collect();
    let values: Vec<f64> = coords
        .par_iter()
        .map(|&(k, i)| {
            let mut m = model.clone();
            let w0 = m.params.0[k].data()[i];
            m.params.0[k].data_mut()[i] = w0 + eps;
            let lp = loss_of(&converged_state(&m, x, &base, ocfg)?, y);
            m.params.0[k].data_mut()[i] = w0 - eps;
            let lm = loss_of(&converged_state(&m, x, &base, ocfg)?, y);
            Ok((lp - lm) / (2.0 * eps))
        })
        .collect::<Result<_>>()?;
    let mut it = values.into_iter();
    let grads = model
        .params
        .0
        .iter()
        .map(|t| Tensor::new(t.shape().to_vec(), it.by_ref().take(t.len()).collect()))
        .collect::<Result<_>>()?;
    Ok(Params(grads))
}

/// A small dense net with an input and a one-hot target.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProblem {
    pub network: Network,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Weights `U(−scale, scale)`, inputs `U(0.2, 1)`, target class `seed mod outputs`.
pub fn random_toy(topology: &Topology, kappa: f64, scale: f64, seed: u64) -> ToyProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut network = Network::init(topology.clone(), kappa, seed);
    for t in &mut network.params.0 {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = scale * rng.random_range(-1.0..1.0));
    }
    let n_in = topology.layer_len(0);
    let n_out = topology.output_len();
    let x = (0..n_in).map(|_| rng.random_range(0.2..1.0)).collect();
    ToyProblem {
        network,
        x,
        y: expand_label(seed as usize % n_out, n_out, 1),
    }
}

/// True when the free fixed point keeps every neuron at least `margin` away
/// from the kinks of σ. With total drive `d` the in-band fixed point is
/// `ξ = κd`, so `u = κ²d` is checked against 0 and 1.
pub fn is_smooth(p: &ToyProblem, margin: f64, ocfg: &OracleConfig) -> bool {
    let net = &p.network;
    let Ok(state) = converged_state(net, &p.x, &NetworkState::zeros(&net.topology), ocfg) else {
        return false;
    };
    let Ok(drives) = layer_drives(net, &rates(net, &p.x, &state)) else {
        return false;
    };
    let k2 = net.kappa * net.kappa;
    drives
        .iter()
        .flatten()
        .all(|&d| (k2 * d).abs() >= margin && (k2 * d - 1.0).abs() >= margin)
}

/// First smooth problem among seeds `seed·1000 ..` (at most `tries`). On
/// such nets the loss is differentiable and small nudges stay on one piece
/// of σ, so finite differences and EP can be compared.
pub fn smooth_toy(
    topology: &Topology,
    kappa: f64,
    scale: f64,
    seed: u64,
    tries: usize,
    ocfg: &OracleConfig,
) -> Result<ToyProblem> {
    (seed * 1000..)
        .take(tries)
        .map(|s| random_toy(topology, kappa, scale, s))
        .find(|p| is_smooth(p, 0.05, ocfg))
        .ok_or_else(|| Error::Contract(format!("no kink-free toy net among {tries} seeds")))
}
