//! Fixed-point relaxation of the layered network.
//!
//! One Euler step updates every non-input layer synchronously from the
//! previous step's activities:
//!
//! `ξ ← (1 − λ)ξ + λ σ'(ξ) (W_below s_below + W_aboveᵀ s_above)`
//!
//! where `s` are fresh Bernoulli spikes (stochastic mode) or the rates `σ(ξ)`
//! themselves (mean-field mode). A nudged phase additionally pulls the output
//! layer by `λβ(ŷ − ξ_out)`.

use std::fmt;
use std::io::Write;

use crate::energy::layer_drives_into;
use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::model::{Network, NetworkState};
use crate::neuron::{
    lif_lowpass_step, lif_predcoding_step_nudged, sample_into, HardSigmoid, LifBaselineState,
    LowPassLifConfig, LowPassLifState, OpCount,
};
use crate::rng::SampleRng;

/// Any membrane beyond this magnitude aborts the relaxation.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Free,
    Nudge,
    NudgeNeg,
}

impl Phase {
    pub fn from_beta(beta: f64) -> Self {
        if beta == 0.0 {
            Phase::Free
        } else if beta > 0.0 {
            Phase::Nudge
        } else {
            Phase::NudgeNeg
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Free => "free",
            Phase::Nudge => "nudge",
            Phase::NudgeNeg => "nudge_neg",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub lambda: f64,
    pub steps: usize,
    /// 0 in the free phase; the sign selects the nudge direction.
    pub beta: f64,
    pub record_traces: bool,
    /// Layer (1-based, input is 0) whose per-neuron membranes are recorded.
    pub trace_layer: Option<usize>,
    /// Stop early once the step residual drops to this value.
    pub tol: Option<f64>,
}

impl PhaseConfig {
    pub fn free(lambda: f64, steps: usize) -> Self {
        Self {
            lambda,
            steps,
            beta: 0.0,
            record_traces: false,
            trace_layer: None,
            tol: None,
        }
    }

    pub fn nudge(lambda: f64, steps: usize, beta: f64) -> Self {
        Self {
            beta,
            ..Self::free(lambda, steps)
        }
    }

    pub fn traced(mut self, trace_layer: Option<usize>) -> Self {
        self.record_traces = true;
        self.trace_layer = trace_layer;
        self
    }

    pub fn until(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn phase(&self) -> Phase {
        Phase::from_beta(self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Contract(format!(
                "lambda must be in (0, 1], got {}",
                self.lambda
            )));
        }
        if self.steps == 0 {
            return Err(Error::Contract("relaxation needs at least one step".into()));
        }
        if !self.beta.is_finite() {
            return Err(Error::Contract("beta must be finite".into()));
        }
        Ok(())
    }
}

/// Final state of a relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub state: NetworkState,
    /// `σ(ξ)` of every non-input layer.
    pub rates: Vec<Tensor>,
    /// `‖ξ^{T} − ξ^{T−1}‖∞` of the last step taken.
    pub residual: f64,
    pub steps_taken: usize,
    /// Per non-input layer: fraction of neurons active, averaged over the
    /// steps taken (spike density, or mean rate in mean-field mode).
    pub activity: Vec<f64>,
}

impl FixedPoint {
    /// Rates prefixed with the clamped input, the form the weight gradient reads.
    pub fn rates_with_input(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.rates.len() + 1);
        out.push(x.to_vec());
        out.extend(self.rates.iter().map(|t| t.data().to_vec()));
        out
    }

    pub fn output(&self) -> &Tensor {
        self.state.output()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSummary {
    pub mean_xi: f64,
    /// Variance across the neurons of the layer.
    pub var_xi: f64,
    /// Fraction of neurons spiking at this step (mean rate in mean-field mode).
    pub firing_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSummary {
    pub phase: Phase,
    /// Non-input layers, in order.
    pub layers: Vec<LayerSummary>,
}

/// Per-step recording of a relaxation (possibly several phases back to back).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub steps: Vec<StepSummary>,
    /// Index of the first step after the free phase.
    pub phase_boundary: Option<usize>,
    pub traced_layer: Option<usize>,
    /// Per-step membranes of `traced_layer`.
    pub membranes: Vec<Vec<f64>>,
}

impl TraceLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Append a later phase; marks the boundary when leaving the free phase.
    pub fn append(&mut self, other: TraceLog) {
        let first_other = other.steps.first().map(|s| s.phase);
        let last_self = self.steps.last().map(|s| s.phase);
        if self.phase_boundary.is_none()
            && last_self == Some(Phase::Free)
            && first_other.is_some_and(|p| p != Phase::Free)
        {
            self.phase_boundary = Some(self.steps.len());
        }
        if self.traced_layer.is_none() {
            self.traced_layer = other.traced_layer;
        }
        self.steps.extend(other.steps);
        self.membranes.extend(other.membranes);
    }

    /// Mean over neurons of each neuron's membrane variance across
    /// `window` steps ending just before `end`.
    pub fn temporal_variance(&self, end: usize, window: usize) -> Option<f64> {
        if window < 2 || end > self.membranes.len() || end < window {
            return None;
        }
        let rows = &self.membranes[end - window..end];
        let n = rows[0].len();
        if n == 0 {
            return None;
        }
        let mut total = 0.0;
        for i in 0..n {
            let mean = rows.iter().map(|r| r[i]).sum::<f64>() / window as f64;
            total += rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / window as f64;
        }
        Some(total / n as f64)
    }

    /// CSV with header `step,phase,layer,mean_xi,var_xi,firing_rate`; layers are
    /// numbered from 1 (the input layer is not recorded).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,phase,layer,mean_xi,var_xi,firing_rate")?;
        for (t, s) in self.steps.iter().enumerate() {
            for (l, ls) in s.layers.iter().enumerate() {
                writeln!(
                    w,
                    "{t},{},{},{},{},{}",
                    s.phase,
                    l + 1,
                    ls.mean_xi,
                    ls.var_xi,
                    ls.firing_rate
                )?;
            }
        }
        Ok(())
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn check_target(model: &Network, phase: &PhaseConfig, target: Option<&[f64]>) -> Result<()> {
    if phase.beta != 0.0 {
        let t = target.ok_or_else(|| Error::Contract("nudged phase requires a target".into()))?;
        if t.len() != model.topology.output_len() {
            return Err(Error::Dimension(format!(
                "target has {} values, output layer has {}",
                t.len(),
                model.topology.output_len()
            )));
        }
    }
    Ok(())
}

/// Stochastic relaxation: every step draws fresh spikes for all layers,
/// the input included, from streams addressed by `(layer, step)` under `rng`.
pub fn relax(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    phase: &PhaseConfig,
    target: Option<&[f64]>,
    rng: &SampleRng,
) -> Result<(FixedPoint, TraceLog)> {
    relax_impl(model, x, init, phase, target, Some(rng))
}

/// Deterministic rate-model relaxation: spikes replaced by `σ(ξ)`.
pub fn relax_meanfield(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    phase: &PhaseConfig,
    target: Option<&[f64]>,
) -> Result<FixedPoint> {
    Ok(relax_impl(model, x, init, phase, target, None)?.0)
}

pub fn relax_meanfield_traced(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    phase: &PhaseConfig,
    target: Option<&[f64]>,
) -> Result<(FixedPoint, TraceLog)> {
    relax_impl(model, x, init, phase, target, None)
}

fn relax_impl(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    phase: &PhaseConfig,
    target: Option<&[f64]>,
    rng: Option<&SampleRng>,
) -> Result<(FixedPoint, TraceLog)> {
    phase.validate()?;
    model.check_input(x)?;
    init.check(&model.topology)?;
    check_target(model, phase, target)?;

    let hs = HardSigmoid { kappa: model.kappa };
    let n_layers = init.0.len();
    let lambda = phase.lambda;
    let mut xi: Vec<Vec<f64>> = init.0.iter().map(|t| t.data().to_vec()).collect();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
    acts.push(x.to_vec());
    acts.extend(xi.iter().map(|v| vec![0.0; v.len()]));
    let mut drives: Vec<Vec<f64>> = xi.iter().map(|v| vec![0.0; v.len()]).collect();

    let mut trace = TraceLog {
        traced_layer: phase.trace_layer,
        ..TraceLog::default()
    };
    let mut residual = 0.0;
    let mut steps_taken = 0;
    let mut activity = vec![0.0; n_layers];

    for t in 0..phase.steps {
        match rng {
            Some(r) => {
                sample_into(x, &mut r.stream(0, t), &mut acts[0])?;
                for l in 0..n_layers {
                    let mut s = r.stream(l + 1, t);
                    for (a, &v) in acts[l + 1].iter_mut().zip(&xi[l]) {
                        *a = if s.next_f64() < hs.apply(v) { 1.0 } else { 0.0 };
                    }
                }
            }
            None => {
                for l in 0..n_layers {
                    for (a, &v) in acts[l + 1].iter_mut().zip(&xi[l]) {
                        *a = hs.apply(v);
                    }
                }
            }
        }

        layer_drives_into(model, &acts, &mut drives)?;
        for (a, layer) in activity.iter_mut().zip(&acts[1..]) {
            *a += layer.iter().sum::<f64>() / layer.len().max(1) as f64;
        }

        residual = 0.0f64;
        for l in 0..n_layers {
            let nudge = if l + 1 == n_layers && phase.beta != 0.0 {
                target
            } else {
                None
            };
            for (i, (v, &d)) in xi[l].iter_mut().zip(&drives[l]).enumerate() {
                let mut next = (1.0 - lambda) * *v + lambda * hs.derivative(*v) * d;
                if let Some(y) = nudge {
                    next += lambda * phase.beta * (y[i] - *v);
                }
                if !next.is_finite() || next.abs() > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence {
                        step: t,
                        layer: l + 1,
                        magnitude: next.abs(),
                    });
                }
                residual = residual.max((next - *v).abs());
                *v = next;
            }
        }
        steps_taken = t + 1;

        if phase.record_traces {
            let layers = (0..n_layers)
                .map(|l| {
                    let (mean_xi, var_xi) = mean_var(&xi[l]);
                    let firing_rate = mean_var(&acts[l + 1]).0;
                    LayerSummary {
                        mean_xi,
                        var_xi,
                        firing_rate,
                    }
                })
                .collect();
            trace.steps.push(StepSummary {
                phase: phase.phase(),
                layers,
            });
            if let Some(tl) = phase.trace_layer {
                trace.membranes.push(xi[tl - 1].clone());
            }
        }

        if phase.tol.is_some_and(|tol| residual <= tol) {
            break;
        }
    }

    let state = NetworkState(
        init.0
            .iter()
            .zip(xi)
            .map(|(t, v)| Tensor::new(t.shape().to_vec(), v))
            .collect::<Result<_>>()?,
    );
    let rates = state.0.iter().map(|t| t.map(|v| hs.apply(v))).collect();
    activity
        .iter_mut()
        .for_each(|a| *a /= steps_taken.max(1) as f64);
    Ok((
        FixedPoint {
            state,
            rates,
            residual,
            steps_taken,
            activity,
        },
        trace,
    ))
}

// ---------------------------------------------------------------------------
// Deterministic LIF variants run on the same weights, for the stability study.

fn lif_summary(membranes: &[Vec<f64>], spikes: &[Vec<f64>]) -> Vec<LayerSummary> {
    membranes
        .iter()
        .zip(spikes)
        .map(|(m, s)| {
            let (mean_xi, var_xi) = mean_var(m);
            LayerSummary {
                mean_xi,
                var_xi,
                firing_rate: mean_var(s).0,
            }
        })
        .collect()
}

/// Relaxation with LIF neurons whose low-pass filtered spike trains serve as
/// rates. The recorded membrane is the LIF potential `v`. During nudged
/// phases the output current gains `β(ŷ − r_out)`.
pub fn relax_lif_lowpass(
    model: &Network,
    x: &[f64],
    phases: &[PhaseConfig],
    target: Option<&[f64]>,
    cfg: &LowPassLifConfig,
) -> Result<TraceLog> {
    model.check_input(x)?;
    let n_layers = model.topology.layer_shapes().len() - 1;
    let mut states: Vec<LowPassLifState> = (1..=n_layers)
        .map(|l| LowPassLifState::new(model.topology.layer_len(l)))
        .collect();
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    acts.extend(states.iter().map(|s| s.filtered.clone()));
    let mut drives: Vec<Vec<f64>> = states.iter().map(|s| vec![0.0; s.v.len()]).collect();
    let mut log = TraceLog::default();
    let mut step = 0;
    for phase in phases {
        phase.validate()?;
        check_target(model, phase, target)?;
        let mut part = TraceLog {
            traced_layer: phase.trace_layer,
            ..TraceLog::default()
        };
        for _ in 0..phase.steps {
            layer_drives_into(model, &acts, &mut drives)?;
            if phase.beta != 0.0 {
                let y = target.expect("checked");
                let out = &states[n_layers - 1].filtered;
                for (i, d) in drives[n_layers - 1].iter_mut().enumerate() {
                    *d += phase.beta * (y[i] - out[i]);
                }
            }
            let spikes: Vec<Vec<f64>> = states
                .iter_mut()
                .zip(&drives)
                .map(|(s, d)| lif_lowpass_step(s, d, cfg))
                .collect();
            for (l, s) in states.iter().enumerate() {
                if let Some((i, v)) =
                    s.v.iter()
                        .enumerate()
                        .find(|(_, v)| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
                {
                    let _ = i;
                    return Err(Error::Divergence {
                        step,
                        layer: l + 1,
                        magnitude: v.abs(),
                    });
                }
                acts[l + 1].copy_from_slice(&s.filtered);
            }
            let membranes: Vec<Vec<f64>> = states.iter().map(|s| s.v.clone()).collect();
            part.steps.push(StepSummary {
                phase: phase.phase(),
                layers: lif_summary(&membranes, &spikes),
            });
            if let Some(tl) = phase.trace_layer {
                part.membranes.push(membranes[tl - 1].clone());
            }
            step += 1;
        }
        log.append(part);
    }
    Ok(log)
}

/// Relaxation with predictive-coding LIF neurons: spikes carry quantized
/// changes of `σ(ξ)` and each neuron decodes its weighted input with factor
/// `alpha` (1 disables prediction). Returns the trace and the coding overhead.
pub fn relax_lif_predictive(
    model: &Network,
    x: &[f64],
    phases: &[PhaseConfig],
    target: Option<&[f64]>,
    alpha: f64,
    v_th: f64,
) -> Result<(TraceLog, OpCount)> {
    model.check_input(x)?;
    let hs = HardSigmoid { kappa: model.kappa };
    let n_layers = model.topology.layer_shapes().len() - 1;
    let mut states: Vec<LifBaselineState> = (1..=n_layers)
        .map(|l| LifBaselineState::new(model.topology.layer_len(l), alpha, v_th))
        .collect::<Result<_>>()?;
    // The clamped input is encoded by the same delta rule with a constant rate.
    let mut input_v = vec![0.0; x.len()];
    let mut input_prev = vec![0.0; x.len()];
    let mut acts: Vec<Vec<f64>> = vec![vec![0.0; x.len()]];
    acts.extend(states.iter().map(|s| vec![0.0; s.v.len()]));
    let mut drives: Vec<Vec<f64>> = states.iter().map(|s| vec![0.0; s.v.len()]).collect();
    let mut ops = OpCount::default();
    let mut log = TraceLog::default();
    let mut step = 0;
    for phase in phases {
        phase.validate()?;
        check_target(model, phase, target)?;
        let mut part = TraceLog {
            traced_layer: phase.trace_layer,
            ..TraceLog::default()
        };
        for _ in 0..phase.steps {
            for i in 0..x.len() {
                let enc = (x[i] - (1.0 - alpha) * input_prev[i]) / alpha;
                input_prev[i] = x[i];
                let s = if input_v[i] + enc > v_th { 1.0 } else { 0.0 };
                input_v[i] += enc - s;
                acts[0][i] = s;
            }
            layer_drives_into(model, &acts, &mut drives)?;
            let mut spikes = Vec::with_capacity(n_layers);
            for (l, (st, d)) in states.iter_mut().zip(&drives).enumerate() {
                let nudge = if l + 1 == n_layers && phase.beta != 0.0 {
                    target.map(|y| (phase.beta, y))
                } else {
                    None
                };
                let (s, o) = lif_predcoding_step_nudged(st, d, phase.lambda, hs, nudge);
                ops.mults += o.mults;
                ops.adds += o.adds;
                if let Some(v) = st
                    .xi
                    .iter()
                    .find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
                {
                    return Err(Error::Divergence {
                        step,
                        layer: l + 1,
                        magnitude: v.abs(),
                    });
                }
                spikes.push(s);
            }
            for (a, s) in acts[1..].iter_mut().zip(&spikes) {
                a.copy_from_slice(s);
            }
            let membranes: Vec<Vec<f64>> = states.iter().map(|s| s.xi.clone()).collect();
            part.steps.push(StepSummary {
                phase: phase.phase(),
                layers: lif_summary(&membranes, &spikes),
            });
            if let Some(tl) = phase.trace_layer {
                part.membranes.push(membranes[tl - 1].clone());
            }
            step += 1;
        }
        log.append(part);
    }
    Ok((log, ops))
}

// ---------------------------------------------------------------------------
// Stability summary across samples and neuron models.

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub model: String,
    pub step: usize,
    pub phase: Phase,
    pub layer: usize,
    pub mean_xi: f64,
    pub var_xi: f64,
    /// Variance across traces of the layer-mean membrane.
    pub spread: f64,
    pub firing_rate: f64,
    pub boundary: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySummary {
    pub model: String,
    /// Mean per-neuron membrane variance over the last `window` free steps,
    /// averaged over traces (needs recorded membranes).
    pub temporal_variance: Option<f64>,
    /// Max over layers of the last-step change of the trace-averaged layer mean.
    pub residual: f64,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub summaries: Vec<StabilitySummary>,
}

/// Average traces per model. All traces must have the same length and layer
/// count; `window` is the number of final free-phase steps summarized.
pub fn stability_report(groups: &[(&str, &[TraceLog])], window: usize) -> Result<StabilityReport> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (name, traces) in groups {
        let Some(first) = traces.first() else {
            return Err(Error::Consistency(format!("no traces for {name}")));
        };
        let len = first.len();
        let n_layers = first.steps.first().map_or(0, |s| s.layers.len());
        if traces
            .iter()
            .any(|t| t.len() != len || t.steps.iter().any(|s| s.layers.len() != n_layers))
        {
            return Err(Error::Consistency(format!(
                "traces of {name} differ in length or layer count"
            )));
        }
        let n = traces.len() as f64;
        let mut avg_means = vec![vec![0.0; n_layers]; len];
        for t in 0..len {
            for l in 0..n_layers {
                let means: Vec<f64> = traces
                    .iter()
                    .map(|tr| tr.steps[t].layers[l].mean_xi)
                    .collect();
                let (mean_xi, spread) = mean_var(&means);
                avg_means[t][l] = mean_xi;
                rows.push(StabilityRow {
                    model: name.to_string(),
                    step: t,
                    phase: first.steps[t].phase,
                    layer: l + 1,
                    mean_xi,
                    var_xi: traces
                        .iter()
                        .map(|tr| tr.steps[t].layers[l].var_xi)
                        .sum::<f64>()
                        / n,
                    spread,
                    firing_rate: traces
                        .iter()
                        .map(|tr| tr.steps[t].layers[l].firing_rate)
                        .sum::<f64>()
                        / n,
                    boundary: first.phase_boundary,
                });
            }
        }
        let free_end = first.phase_boundary.unwrap_or(len);
        let residual = if free_end >= 2 {
            (0..n_layers)
                .map(|l| (avg_means[free_end - 1][l] - avg_means[free_end - 2][l]).abs())
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        let tv: Option<Vec<f64>> = traces
            .iter()
            .map(|tr| tr.temporal_variance(free_end, window))
            .collect();
        summaries.push(StabilitySummary {
            model: name.to_string(),
            temporal_variance: tv.map(|v| v.iter().sum::<f64>() / n),
            residual,
            window,
        });
    }
    Ok(StabilityReport { rows, summaries })
}

impl StabilityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "model,step,phase,layer,mean_xi,var_xi,spread,firing_rate,boundary"
        )?;
        for r in &self.rows {
            let b = r.boundary.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.model, r.step, r.phase, r.layer, r.mean_xi, r.var_xi, r.spread, r.firing_rate, b
            )?;
        }
        Ok(())
    }

    pub fn summary(&self, model: &str) -> Option<&StabilitySummary> {
        self.summaries.iter().find(|s| s.model == model)
    }
}

/// Trace-averaged per-neuron membranes (step × neuron) for heatmap export.
pub fn mean_membranes(traces: &[TraceLog]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = traces.first() else {
        return Ok(Vec::new());
    };
    let mut acc = first.membranes.clone();
    for tr in &traces[1..] {
        if tr.membranes.len() != acc.len() {
            return Err(Error::Consistency(
                "membrane traces differ in length".into(),
            ));
        }
        for (a, m) in acc.iter_mut().zip(&tr.membranes) {
            a.iter_mut().zip(m).for_each(|(a, b)| *a += b);
        }
    }
    let n = traces.len() as f64;
    acc.iter_mut()
        .for_each(|r| r.iter_mut().for_each(|v| *v /= n));
    Ok(acc)
}
