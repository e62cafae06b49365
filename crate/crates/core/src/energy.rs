//! Hopfield-style layered energy and its stochastic counterpart.
//!
//! `E(x, ξ, w) = ½ Σ‖ξ_i‖² − Σ_k ρ(ξ_{k+1}) · F_k(ρ(ξ_k))`, with the clamped
//! input `x` standing in for `ρ(ξ_0)`. The deterministic and expected energies
//! use `ρ = σ`; the stochastic energy replaces every `ρ(·)` with fresh
//! Bernoulli spikes (input spikes drawn from `x`).

use crate::error::Result;
use crate::linalg::{self, Tensor};
use crate::model::{Connection, Network, NetworkState, Params};
use crate::neuron::{sample_into, HardSigmoid};
use crate::rng::RngStream;

/// Firing rates `σ(ξ)` for every layer, with the input layer passed through.
pub fn rates(model: &Network, x: &[f64], state: &NetworkState) -> Vec<Vec<f64>> {
    let hs = HardSigmoid { kappa: model.kappa };
    let mut out = Vec::with_capacity(state.0.len() + 1);
    out.push(x.to_vec());
    out.extend(
        state
            .0
            .iter()
            .map(|t| t.data().iter().map(|&v| hs.apply(v)).collect()),
    );
    out
}

fn quadratic(state: &NetworkState) -> f64 {
    0.5 * state.0.iter().map(Tensor::norm_sq).sum::<f64>()
}

/// Energy with arbitrary per-layer activities (`activities[0]` is the input).
pub fn energy_from_activities(
    model: &Network,
    state: &NetworkState,
    activities: &[Vec<f64>],
) -> Result<f64> {
    let mut e = quadratic(state);
    for (k, conn) in model.topology.connections().iter().enumerate() {
        e -= conn.interaction(&model.params.0[k], &activities[k], &activities[k + 1])?;
    }
    Ok(e)
}

pub fn energy_det(model: &Network, x: &[f64], state: &NetworkState) -> Result<f64> {
    model.check_input(x)?;
    state.check(&model.topology)?;
    energy_from_activities(model, state, &rates(model, x, state))
}

/// Mean of [`energy_stoch`] over spike draws; identical to [`energy_det`]
/// because spikes are independent given ξ and `E[B(σ)] = σ`.
pub fn energy_expected(model: &Network, x: &[f64], state: &NetworkState) -> Result<f64> {
    energy_det(model, x, state)
}

pub fn energy_stoch(
    model: &Network,
    x: &[f64],
    state: &NetworkState,
    rng: &mut RngStream,
) -> Result<f64> {
    model.check_input(x)?;
    state.check(&model.topology)?;
    let mut spikes = Vec::with_capacity(state.0.len() + 1);
    for layer in rates(model, x, state) {
        let mut s = vec![0.0; layer.len()];
        sample_into(&layer, rng, &mut s)?;
        spikes.push(s);
    }
    energy_from_activities(model, state, &spikes)
}

/// `∂E/∂w` per connection: `−σ(ξ_k) ⊗ σ(ξ_{k+1})` for dense connections, the
/// matching correlation for conv connections.
pub fn denergy_dw(model: &Network, x: &[f64], state: &NetworkState) -> Result<Params> {
    model.check_input(x)?;
    state.check(&model.topology)?;
    denergy_dw_from_rates(model, &rates(model, x, state))
}

pub fn denergy_dw_from_rates(model: &Network, rates: &[Vec<f64>]) -> Result<Params> {
    let mut grads = Vec::with_capacity(rates.len() - 1);
    for (k, conn) in model.topology.connections().iter().enumerate() {
        let mut g = conn.interaction_grad(&model.params.0[k], &rates[k], &rates[k + 1])?;
        g.scale(-1.0);
        grads.push(g);
    }
    Ok(Params(grads))
}

/// Total synaptic drive reaching each non-input layer from its neighbours.
pub fn layer_drives(model: &Network, activities: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut drives: Vec<Vec<f64>> = (1..activities.len())
        .map(|l| vec![0.0; model.topology.layer_len(l)])
        .collect();
    layer_drives_into(model, activities, &mut drives)?;
    Ok(drives)
}

/// [`layer_drives`] into preallocated buffers (overwritten).
pub fn layer_drives_into(
    model: &Network,
    activities: &[Vec<f64>],
    drives: &mut [Vec<f64>],
) -> Result<()> {
    drives
        .iter_mut()
        .for_each(|d| d.iter_mut().for_each(|v| *v = 0.0));
    for (k, conn) in model.topology.connections().iter().enumerate() {
        let w = &model.params.0[k];
        match conn {
            Connection::Dense { out_features, .. } => {
                linalg::vec_mat_acc(&activities[k], w.data(), *out_features, &mut drives[k]);
                if k > 0 {
                    linalg::mat_vec_acc(
                        w.data(),
                        *out_features,
                        &activities[k + 1],
                        &mut drives[k - 1],
                    );
                }
            }
            Connection::Conv { .. } => {
                let (up, idx) = conn.forward(w, &activities[k])?;
                for (d, u) in drives[k].iter_mut().zip(&up) {
                    *d += u;
                }
                if k > 0 {
                    let down = conn.feedback(w, &activities[k + 1], idx.as_ref())?;
                    for (d, v) in drives[k - 1].iter_mut().zip(&down) {
                        *d += v;
                    }
                }
            }
        }
    }
    Ok(())
}

/// `∂E/∂ξ = ξ − σ'(ξ) ⊙ drive` for every non-input layer.
pub fn denergy_dxi(model: &Network, x: &[f64], state: &NetworkState) -> Result<Vec<Tensor>> {
    let hs = HardSigmoid { kappa: model.kappa };
    let drives = layer_drives(model, &rates(model, x, state))?;
    Ok(state
        .0
        .iter()
        .zip(&drives)
        .map(|(xi, d)| {
            let data = xi
                .data()
                .iter()
                .zip(d)
                .map(|(&v, &dv)| v - hs.derivative(v) * dv)
                .collect();
            Tensor::new(xi.shape().to_vec(), data).expect("same shape")
        })
        .collect())
}
