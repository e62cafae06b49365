//! Equilibrium Propagation training: free and nudged relaxations, the
//! contrastive weight gradient, batch reduction, optimizer steps, and the
//! per-frame loop for sequences.

pub mod checkpoint;
pub mod optimizer;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::data::{batches, epoch_order, expand_label, Dataset, SequenceDataset};
use crate::dynamics::{relax, relax_meanfield, FixedPoint, PhaseConfig};
use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::model::{Connection, Network, NetworkState, Params, Topology};
use crate::rng::{mix_key, SampleRng};

pub use optimizer::{Optimizer, OptimizerKind};

const TAG_TRAIN: u64 = 0x7472;
const TAG_EVAL: u64 = 0x6576;
const TAG_SHUFFLE: u64 = 0x7368;
const TAG_SIGN: u64 = 0x7367;
const TAG_FREE: u64 = 1;
const TAG_NUDGE_POS: u64 = 2;
const TAG_NUDGE_NEG: u64 = 3;

/// How the finite-β bias of the estimator is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasMode {
    /// Two phases; the sign of β is flipped at random once per batch.
    RandomSign,
    /// Free phase plus +β and −β nudges.
    ThreePhase,
}

impl FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_sign" | "random" => Ok(Self::RandomSign),
            "three_phase" => Ok(Self::ThreePhase),
            _ => Err(Error::Config(format!(
                "unknown bias mode {s:?} (random_sign, three_phase)"
            ))),
        }
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RandomSign => "random_sign",
            Self::ThreePhase => "three_phase",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxMode {
    Stochastic,
    MeanField,
}

impl FromStr for RelaxMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Self::Stochastic),
            "meanfield" => Ok(Self::MeanField),
            _ => Err(Error::Config(format!(
                "unknown relax mode {s:?} (stochastic, meanfield)"
            ))),
        }
    }
}

impl fmt::Display for RelaxMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Stochastic => "stochastic",
            Self::MeanField => "meanfield",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub t_free: usize,
    pub t_nudge: usize,
    pub beta: f64,
    pub kappa: f64,
    pub n_classes: usize,
    pub n_perclass: usize,
    pub bias_mode: BiasMode,
    pub relax_mode: RelaxMode,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub workers: usize,
    /// Sequences: start frame τ+1 from frame τ's nudged state instead of zero.
    pub carry_state: bool,
}

impl TrainConfig {
    /// Single hidden layer MNIST settings.
    pub fn mnist_1fc() -> Self {
        Self {
            lambda: 0.5,
            t_free: 60,
            t_nudge: 15,
            beta: 0.75,
            kappa: 2.0,
            n_classes: 10,
            n_perclass: 10,
            bias_mode: BiasMode::RandomSign,
            relax_mode: RelaxMode::Stochastic,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            batch_size: 4,
            epochs: 100,
            seed: 1,
            workers: 1,
            carry_state: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad(format!("lambda must be in (0, 1], got {}", self.lambda));
        }
        if self.t_free == 0 || self.t_nudge == 0 {
            return bad("t_free and t_nudge must be positive".into());
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if self.n_classes == 0 || self.n_perclass == 0 {
            return bad("n_classes and n_perclass must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.weight_decay < 0.0
            || (self.weight_decay != 0.0 && self.optimizer == OptimizerKind::Sgd)
        {
            return bad("weight_decay must be non-negative and requires optimizer = adamw".into());
        }
        if self.batch_size == 0 || self.workers == 0 {
            return bad("batch_size and workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn free_phase(&self) -> PhaseConfig {
        PhaseConfig::free(self.lambda, self.t_free)
    }

    pub fn nudge_phase(&self, beta: f64) -> PhaseConfig {
        PhaseConfig::nudge(self.lambda, self.t_nudge, beta)
    }

    pub fn output_width(&self) -> usize {
        self.n_classes * self.n_perclass
    }
}

/// Widen the output layer to `n_classes · n_perclass` neurons.
pub fn augment_outputs(
    topology: &Topology,
    n_classes: usize,
    n_perclass: usize,
) -> Result<Topology> {
    if n_perclass == 0 || n_classes == 0 {
        return Err(Error::Contract(
            "n_classes and n_perclass must be at least 1".into(),
        ));
    }
    topology.with_output_width(n_classes * n_perclass)
}

/// Class with the largest summed output over its neuron group (lowest index on ties).
pub fn predict_class(output: &[f64], n_classes: usize, n_perclass: usize) -> usize {
    let mut best = 0;
    let mut best_sum = f64::NEG_INFINITY;
    for c in 0..n_classes {
        let s: f64 = output[c * n_perclass..(c + 1) * n_perclass].iter().sum();
        if s > best_sum {
            best = c;
            best_sum = s;
        }
    }
    best
}

pub fn output_loss(output: &[f64], target: &[f64]) -> f64 {
    0.5 * output
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
}

/// Weight gradient estimate for one sample or one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimate {
    pub grads: Params,
    /// The signed β the estimate was divided by.
    pub beta_used: f64,
}

/// The estimator as a weighted sum `Σ c_t ∂E/∂w(r_t)` over fixed-point rates
/// `r_t` (input first). Each connection reads only its two adjacent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EpTerms {
    pub terms: Vec<(f64, Vec<Vec<f64>>)>,
    pub beta_used: f64,
}

/// Free and nudged fixed points of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EpPhases {
    pub free: FixedPoint,
    /// `(signed β, fixed point)` for each nudge that was run.
    pub nudged: Vec<(f64, FixedPoint)>,
}

fn relax_with(
    model: &Network,
    x: &[f64],
    init: &NetworkState,
    phase: &PhaseConfig,
    target: Option<&[f64]>,
    cfg: &TrainConfig,
    rng: &SampleRng,
) -> Result<FixedPoint> {
    match cfg.relax_mode {
        RelaxMode::Stochastic => Ok(relax(model, x, init, phase, target, rng)?.0),
        RelaxMode::MeanField => relax_meanfield(model, x, init, phase, target),
    }
}

/// Free phase from `init`, then one nudge per entry of `betas`, each starting
/// at the free fixed point. Spike streams are keyed by phase and sign so the
/// same sign always sees the same draws.
pub fn run_phases(
    model: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
    rng: &SampleRng,
    init: &NetworkState,
    betas: &[f64],
) -> Result<EpPhases> {
    let free = relax_with(
        model,
        x,
        init,
        &cfg.free_phase(),
        None,
        cfg,
        &rng.derive(TAG_FREE),
    )?;
    let mut nudged = Vec::with_capacity(betas.len());
    for &b in betas {
        let tag = if b > 0.0 {
            TAG_NUDGE_POS
        } else {
            TAG_NUDGE_NEG
        };
        let fp = relax_with(
            model,
            x,
            &free.state,
            &cfg.nudge_phase(b),
            Some(y),
            cfg,
            &rng.derive(tag),
        )?;
        nudged.push((b, fp));
    }
    Ok(EpPhases { free, nudged })
}

fn two_phase_terms(x: &[f64], phases: &EpPhases) -> EpTerms {
    let (b, nudged) = &phases.nudged[0];
    EpTerms {
        terms: vec![
            (1.0 / b, nudged.rates_with_input(x)),
            (-1.0 / b, phases.free.rates_with_input(x)),
        ],
        beta_used: *b,
    }
}

fn three_phase_terms(x: &[f64], phases: &EpPhases) -> EpTerms {
    let (b, plus) = &phases.nudged[0];
    let (_, minus) = &phases.nudged[1];
    let c = 1.0 / (2.0 * b);
    EpTerms {
        terms: vec![
            (c, plus.rates_with_input(x)),
            (-c, minus.rates_with_input(x)),
        ],
        beta_used: *b,
    }
}

/// Gradient of one connection from `(coefficient, lower rates, upper rates)`
/// triples: `Σ c · ∂E/∂w = −Σ c · lower ⊗ upper` for dense weights, the matching
/// correlation for conv kernels. Summation order is the triple order for
/// every weight, so row-parallel and serial evaluation agree bitwise.
pub fn connection_gradient(
    conn: &Connection,
    weight: &Tensor,
    terms: &[(f64, &[f64], &[f64])],
    pool: Option<&ThreadPool>,
) -> Result<Tensor> {
    match conn {
        Connection::Dense {
            in_features,
            out_features,
        } => {
            let cols = *out_features;
            let mut g = vec![0.0; in_features * cols];
            let row = |(j, out): (usize, &mut [f64])| {
                for &(c, lo, hi) in terms {
                    let a = lo[j];
                    if a != 0.0 {
                        let s = -c * a;
                        for (o, &b) in out.iter_mut().zip(hi) {
                            *o += s * b;
                        }
                    }
                }
            };
            match pool {
                Some(p) if p.current_num_threads() > 1 => {
                    p.install(|| g.par_chunks_mut(cols).enumerate().for_each(row));
                }
                _ => g.chunks_mut(cols).enumerate().for_each(row),
            }
            Tensor::new(vec![*in_features, cols], g)
        }
        Connection::Conv { .. } => {
            let mut g = Tensor::zeros(weight.shape());
            for &(c, lo, hi) in terms {
                let t = conn.interaction_grad(weight, lo, hi)?;
                g.axpy(-c, &t);
            }
            Ok(g)
        }
    }
}

/// Mean of several samples' estimates, reduced in sample order.
pub fn batch_gradient(
    model: &Network,
    samples: &[EpTerms],
    pool: Option<&ThreadPool>,
) -> Result<Params> {
    let scale = 1.0 / samples.len().max(1) as f64;
    let mut grads = Vec::with_capacity(model.params.0.len());
    for (k, conn) in model.topology.connections().iter().enumerate() {
        let triples: Vec<(f64, &[f64], &[f64])> = samples
            .iter()
            .flat_map(|s| {
                s.terms
                    .iter()
                    .map(move |(c, r)| (c * scale, &r[k][..], &r[k + 1][..]))
            })
            .collect();
        grads.push(connection_gradient(
            conn,
            &model.params.0[k],
            &triples,
            pool,
        )?);
    }
    Ok(Params(grads))
}

fn estimate(model: &Network, terms: EpTerms) -> Result<GradEstimate> {
    let beta_used = terms.beta_used;
    Ok(GradEstimate {
        grads: batch_gradient(model, &[terms], None)?,
        beta_used,
    })
}

/// `(1/β)(∂E/∂w(ξ^β) − ∂E/∂w(ξ*))` with `β = sign · cfg.beta`.
pub fn ep_gradient_two_phase(
    model: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
    rng: &SampleRng,
    sign: f64,
) -> Result<GradEstimate> {
    let init = NetworkState::zeros(&model.topology);
    let phases = run_phases(model, x, y, cfg, rng, &init, &[sign.signum() * cfg.beta])?;
    estimate(model, two_phase_terms(x, &phases))
}

/// `(1/(2β))(∂E/∂w(ξ^β) − ∂E/∂w(ξ^{−β}))`, both nudges from the same ξ*.
pub fn ep_gradient_three_phase(
    model: &Network,
    x: &[f64],
    y: &[f64],
    cfg: &TrainConfig,
    rng: &SampleRng,
) -> Result<GradEstimate> {
    let init = NetworkState::zeros(&model.topology);
    let phases = run_phases(model, x, y, cfg, rng, &init, &[cfg.beta, -cfg.beta])?;
    estimate(model, three_phase_terms(x, &phases))
}

pub fn apply_update(params: &mut Params, grad: &GradEstimate, opt: &mut Optimizer) -> Result<()> {
    opt.apply(params, &grad.grads)
}

/// Streams for one sample presentation.
pub fn train_rng(seed: u64, epoch: usize, index: usize, frame: usize) -> SampleRng {
    SampleRng::new(
        seed,
        mix_key(&[TAG_TRAIN, epoch as u64, index as u64, frame as u64]),
    )
}

pub fn eval_rng(seed: u64, epoch: usize, index: usize, frame: usize) -> SampleRng {
    SampleRng::new(
        seed,
        mix_key(&[TAG_EVAL, epoch as u64, index as u64, frame as u64]),
    )
}

pub fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    mix_key(&[seed, TAG_SHUFFLE, epoch as u64])
}

/// ±1 for the `update`-th optimizer step of an epoch.
pub fn beta_sign(cfg: &TrainConfig, epoch: usize, update: usize) -> f64 {
    match cfg.bias_mode {
        BiasMode::ThreePhase => 1.0,
        BiasMode::RandomSign => {
            let mut s = SampleRng::new(cfg.seed, mix_key(&[TAG_SIGN, epoch as u64, update as u64]))
                .stream(0, 0);
            if s.next_u64() & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// Everything one training presentation produces.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub terms: EpTerms,
    pub phases: EpPhases,
    pub loss: f64,
    pub predicted: usize,
}

/// Relax one sample and build its estimator terms.
pub fn train_sample(
    model: &Network,
    x: &[f64],
    label: usize,
    cfg: &TrainConfig,
    rng: &SampleRng,
    init: &NetworkState,
    sign: f64,
) -> Result<SampleOutcome> {
    let y = expand_label(label, cfg.n_classes, cfg.n_perclass);
    let betas: Vec<f64> = match cfg.bias_mode {
        BiasMode::RandomSign => vec![sign * cfg.beta],
        BiasMode::ThreePhase => vec![cfg.beta, -cfg.beta],
    };
    let phases = run_phases(model, x, &y, cfg, rng, init, &betas)?;
    let terms = match cfg.bias_mode {
        BiasMode::RandomSign => two_phase_terms(x, &phases),
        BiasMode::ThreePhase => three_phase_terms(x, &phases),
    };
    let out = phases.free.output().data();
    Ok(SampleOutcome {
        loss: output_loss(out, &y),
        predicted: predict_class(out, cfg.n_classes, cfg.n_perclass),
        terms,
        phases,
    })
}

/// Per-epoch training or evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    /// Mean activity per non-input layer over all relaxation steps.
    pub firing: Vec<f64>,
    pub samples: usize,
}

#[derive(Default)]
struct StatsAcc {
    loss: f64,
    correct: usize,
    firing: Vec<f64>,
    steps: f64,
    samples: usize,
}

impl StatsAcc {
    fn add_phases(&mut self, phases: &[&FixedPoint]) {
        for fp in phases {
            if self.firing.is_empty() {
                self.firing = vec![0.0; fp.activity.len()];
            }
            let w = fp.steps_taken as f64;
            self.firing
                .iter_mut()
                .zip(&fp.activity)
                .for_each(|(f, a)| *f += w * a);
            self.steps += w;
        }
    }

    fn add(&mut self, loss: f64, correct: bool) {
        self.loss += loss;
        self.correct += usize::from(correct);
        self.samples += 1;
    }

    fn finish(self) -> EpochStats {
        let n = self.samples.max(1) as f64;
        let steps = self.steps.max(1.0);
        EpochStats {
            loss: self.loss / n,
            accuracy: self.correct as f64 / n,
            firing: self.firing.into_iter().map(|f| f / steps).collect(),
            samples: self.samples,
        }
    }
}

/// Owns the network, its optimizer and the worker pool.
pub struct Trainer {
    pub model: Network,
    pub optimizer: Optimizer,
    pub cfg: TrainConfig,
    pool: ThreadPool,
}

impl Trainer {
    pub fn new(model: Network, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if model.topology.output_len() != cfg.output_width() {
            return Err(Error::Consistency(format!(
                "output layer has {} neurons, config needs {} classes × {}",
                model.topology.output_len(),
                cfg.n_classes,
                cfg.n_perclass
            )));
        }
        let optimizer = Optimizer::new(
            cfg.optimizer,
            cfg.learning_rate,
            cfg.weight_decay,
            &model.params,
        );
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
        Ok(Self {
            model,
            optimizer,
            cfg,
            pool,
        })
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Result<Self> {
        if optimizer
            .m
            .as_ref()
            .is_some_and(|m| !m.shapes_match(&self.model.params))
        {
            return Err(Error::Consistency(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.optimizer = optimizer;
        Ok(self)
    }

    /// One pass over `ds` in a seeded order; one optimizer step per batch.
    pub fn train_epoch(&mut self, ds: &Dataset, epoch: usize) -> Result<EpochStats> {
        let cfg = &self.cfg;
        let mut acc = StatsAcc::default();
        let init = NetworkState::zeros(&self.model.topology);
        let seed = shuffle_seed(cfg.seed, epoch);
        for (b, batch) in batches(ds, cfg.batch_size, Some(seed), cfg.n_perclass)?.enumerate() {
            let sign = beta_sign(cfg, epoch, b);
            let model = &self.model;
            let outcomes: Vec<Result<SampleOutcome>> = self.pool.install(|| {
                batch
                    .indices
                    .par_iter()
                    .map(|&i| {
                        train_sample(
                            model,
                            ds.sample(i),
                            ds.label(i),
                            cfg,
                            &train_rng(cfg.seed, epoch, i, 0),
                            &init,
                            sign,
                        )
                    })
                    .collect()
            });
            let outcomes: Vec<SampleOutcome> = outcomes
                .into_iter()
                .collect::<Result<_>>()
                .map_err(|e| Error::Batch {
                    batch: b,
                    source: Box::new(e),
                })?;
            for (o, &i) in outcomes.iter().zip(&batch.indices) {
                acc.add(o.loss, o.predicted == ds.label(i));
                let mut fps = vec![&o.phases.free];
                fps.extend(o.phases.nudged.iter().map(|(_, f)| f));
                acc.add_phases(&fps);
            }
            let terms: Vec<EpTerms> = outcomes.into_iter().map(|o| o.terms).collect();
            let grad = batch_gradient(&self.model, &terms, Some(&self.pool))?;
            self.optimizer
                .apply(&mut self.model.params, &grad)
                .map_err(|e| Error::Batch {
                    batch: b,
                    source: Box::new(e),
                })?;
        }
        Ok(acc.finish())
    }

    /// Free phase only, one stochastic run per sample, class-group prediction.
    pub fn evaluate(&self, ds: &Dataset, epoch: usize) -> Result<EpochStats> {
        let cfg = &self.cfg;
        let model = &self.model;
        let init = NetworkState::zeros(&model.topology);
        let results: Vec<Result<(f64, bool, FixedPoint)>> = self.pool.install(|| {
            (0..ds.len())
                .into_par_iter()
                .map(|i| {
                    let rng = eval_rng(cfg.seed, epoch, i, 0).derive(TAG_FREE);
                    let fp = relax_with(
                        model,
                        ds.sample(i),
                        &init,
                        &cfg.free_phase(),
                        None,
                        cfg,
                        &rng,
                    )?;
                    let y = expand_label(ds.label(i), cfg.n_classes, cfg.n_perclass);
                    let out = fp.output().data();
                    let ok = predict_class(out, cfg.n_classes, cfg.n_perclass) == ds.label(i);
                    Ok((output_loss(out, &y), ok, fp))
                })
                .collect()
        });
        let mut acc = StatsAcc::default();
        for r in results {
            let (loss, ok, fp) = r?;
            acc.add(loss, ok);
            acc.add_phases(&[&fp]);
        }
        Ok(acc.finish())
    }

    /// Online training over sequences: every frame relaxes, nudges and
    /// updates the weights immediately; the sequence prediction sums the
    /// free-phase outputs over frames.
    pub fn train_temporal(&mut self, ds: &SequenceDataset, epoch: usize) -> Result<EpochStats> {
        let mut acc = StatsAcc::default();
        let zeros = NetworkState::zeros(&self.model.topology);
        let order = epoch_order(ds.len(), Some(shuffle_seed(self.cfg.seed, epoch)));
        let mut update = 0;
        for &i in &order {
            let label = ds.label(i);
            let mut init = zeros.clone();
            let mut out_sum = vec![0.0; self.model.topology.output_len()];
            let mut loss = 0.0;
            for (tau, frame) in ds.frames(i).iter().enumerate() {
                let sign = beta_sign(&self.cfg, epoch, update);
                let rng = train_rng(self.cfg.seed, epoch, i, tau);
                let o = train_sample(&self.model, frame, label, &self.cfg, &rng, &init, sign)
                    .map_err(|e| Error::Batch {
                        batch: update,
                        source: Box::new(e),
                    })?;
                let mut fps = vec![&o.phases.free];
                fps.extend(o.phases.nudged.iter().map(|(_, f)| f));
                acc.add_phases(&fps);
                out_sum
                    .iter_mut()
                    .zip(o.phases.free.output().data())
                    .for_each(|(s, v)| *s += v);
                loss += o.loss;
                init = if self.cfg.carry_state {
                    o.phases.nudged[0].1.state.clone()
                } else {
                    zeros.clone()
                };
                let grad = batch_gradient(&self.model, &[o.terms], Some(&self.pool))?;
                self.optimizer
                    .apply(&mut self.model.params, &grad)
                    .map_err(|e| Error::Batch {
                        batch: update,
                        source: Box::new(e),
                    })?;
                update += 1;
            }
            let frames = ds.frames(i).len() as f64;
            acc.add(
                loss / frames,
                predict_class(&out_sum, self.cfg.n_classes, self.cfg.n_perclass) == label,
            );
        }
        Ok(acc.finish())
    }

    /// Free phase per frame (carrying the free state when `carry_state`),
    /// prediction from the frame-summed outputs.
    pub fn evaluate_temporal(&self, ds: &SequenceDataset, epoch: usize) -> Result<EpochStats> {
        let cfg = &self.cfg;
        let model = &self.model;
        let zeros = NetworkState::zeros(&model.topology);
        let results: Vec<Result<(f64, bool, Vec<FixedPoint>)>> = self.pool.install(|| {
            (0..ds.len())
                .into_par_iter()
                .map(|i| {
                    let y = expand_label(ds.label(i), cfg.n_classes, cfg.n_perclass);
                    let mut init = zeros.clone();
                    let mut out_sum = vec![0.0; model.topology.output_len()];
                    let mut loss = 0.0;
                    let mut fps = Vec::new();
                    for (tau, frame) in ds.frames(i).iter().enumerate() {
                        let rng = eval_rng(cfg.seed, epoch, i, tau).derive(TAG_FREE);
                        let fp =
                            relax_with(model, frame, &init, &cfg.free_phase(), None, cfg, &rng)?;
                        out_sum
                            .iter_mut()
                            .zip(fp.output().data())
                            .for_each(|(s, v)| *s += v);
                        loss += output_loss(fp.output().data(), &y);
                        init = if cfg.carry_state {
                            fp.state.clone()
                        } else {
                            zeros.clone()
                        };
                        fps.push(fp);
                    }
                    let ok = predict_class(&out_sum, cfg.n_classes, cfg.n_perclass) == ds.label(i);
                    Ok((loss / ds.frames(i).len() as f64, ok, fps))
                })
                .collect()
        });
        let mut acc = StatsAcc::default();
        for r in results {
            let (loss, ok, fps) = r?;
            acc.add(loss, ok);
            acc.add_phases(&fps.iter().collect::<Vec<_>>());
        }
        Ok(acc.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_cfg() -> TrainConfig {
        TrainConfig {
            lambda: 0.5,
            t_free: 40,
            t_nudge: 20,
            beta: 0.5,
            kappa: 1.0,
            n_classes: 2,
            n_perclass: 2,
            batch_size: 3,
            learning_rate: 0.05,
            ..TrainConfig::mnist_1fc()
        }
    }

    fn toy_net(seed: u64) -> Network {
        Network::init("in:6 fc:8 fc:4".parse().unwrap(), 1.0, seed)
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let l = i % 2;
            for j in 0..6 {
                let on = (j < 3) == (l == 0);
                images.push(if on {
                    rng.random_range(0.6..1.0)
                } else {
                    rng.random_range(0.0..0.2)
                });
            }
            labels.push(l);
        }
        Dataset::new(images, vec![6], labels, 2).unwrap()
    }

    #[test]
    fn augmentation_widths() {
        let t: Topology = "in:784 fc:512 fc:10".parse().unwrap();
        assert_eq!(augment_outputs(&t, 10, 1).unwrap(), t);
        assert_eq!(augment_outputs(&t, 10, 70).unwrap().output_len(), 700);
        assert!(augment_outputs(&t, 10, 0).is_err());
    }

    #[test]
    fn class_group_prediction() {
        let out = [0.1, 0.1, 0.5, 0.0, 0.05, 0.05];
        assert_eq!(predict_class(&out, 3, 2), 1);
        assert_eq!(predict_class(&[0.0; 4], 2, 2), 0);
    }

    #[test]
    fn zero_output_error_gives_zero_gradient() {
        // Zero weights: ξ* = 0, and a target of all zeros leaves the nudge idle.
        let topo: Topology = "in:3 fc:4 fc:2".parse().unwrap();
        let net = Network::with_params(topo.clone(), Params::zeros_for(&topo), 1.0).unwrap();
        let mut cfg = toy_cfg();
        cfg.n_perclass = 1;
        let y = [0.0, 0.0];
        let rng = SampleRng::new(1, 1);
        for mode in [RelaxMode::Stochastic, RelaxMode::MeanField] {
            cfg.relax_mode = mode;
            let g2 = ep_gradient_two_phase(&net, &[0.3, 0.2, 0.9], &y, &cfg, &rng, 1.0).unwrap();
            let g3 = ep_gradient_three_phase(&net, &[0.3, 0.2, 0.9], &y, &cfg, &rng).unwrap();
            for g in [g2, g3] {
                assert!(g.grads.0.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
            }
        }
    }

    #[test]
    fn paired_signs_average_to_three_phase() {
        let net = toy_net(3);
        let cfg = toy_cfg();
        let x = [0.9, 0.1, 0.8, 0.2, 0.7, 0.0];
        let y = expand_label(1, 2, 2);
        let rng = SampleRng::new(5, 9);
        let plus = ep_gradient_two_phase(&net, &x, &y, &cfg, &rng, 1.0).unwrap();
        let minus = ep_gradient_two_phase(&net, &x, &y, &cfg, &rng, -1.0).unwrap();
        assert_eq!(minus.beta_used, -cfg.beta);
        let three = ep_gradient_three_phase(&net, &x, &y, &cfg, &rng).unwrap();
        for k in 0..2 {
            for i in 0..three.grads.0[k].len() {
                let avg = 0.5 * (plus.grads.0[k].data()[i] + minus.grads.0[k].data()[i]);
                assert!((avg - three.grads.0[k].data()[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn gradient_is_local_per_connection() {
        let net = toy_net(4);
        let cfg = toy_cfg();
        let x = [0.9, 0.1, 0.8, 0.2, 0.7, 0.0];
        let y = expand_label(0, 2, 2);
        let init = NetworkState::zeros(&net.topology);
        let o = train_sample(&net, &x, 0, &cfg, &SampleRng::new(2, 2), &init, 1.0).unwrap();
        let _ = y;
        let full = batch_gradient(&net, &[o.terms.clone()], None).unwrap();
        for (k, conn) in net.topology.connections().iter().enumerate() {
            // Only the rate tensors of layers k and k+1 are handed over.
            let pairs: Vec<(f64, Vec<f64>, Vec<f64>)> = o
                .terms
                .terms
                .iter()
                .map(|(c, r)| (*c, r[k].clone(), r[k + 1].clone()))
                .collect();
            let triples: Vec<(f64, &[f64], &[f64])> =
                pairs.iter().map(|(c, a, b)| (*c, &a[..], &b[..])).collect();
            let local = connection_gradient(conn, &net.params.0[k], &triples, None).unwrap();
            assert!(local
                .data()
                .iter()
                .zip(full.0[k].data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut cfg = toy_cfg();
        cfg.learning_rate = 0.0;
        let net = toy_net(1);
        let mut tr = Trainer::new(net.clone(), cfg).unwrap();
        let ds = toy_data(12, 0);
        let before = tr.evaluate(&ds, 0).unwrap();
        tr.train_epoch(&ds, 0).unwrap();
        assert_eq!(tr.model.params, net.params);
        assert_eq!(tr.evaluate(&ds, 0).unwrap(), before);
    }

    #[test]
    fn toy_task_is_learned() {
        let cfg = TrainConfig {
            epochs: 10,
            ..toy_cfg()
        };
        let mut tr = Trainer::new(toy_net(2), cfg).unwrap();
        let train = toy_data(60, 1);
        let test = toy_data(40, 2);
        for e in 0..10 {
            tr.train_epoch(&train, e).unwrap();
        }
        let acc = tr.evaluate(&test, 99).unwrap().accuracy;
        assert!(acc >= 0.9, "accuracy {acc}");
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let train = toy_data(24, 1);
        let run = |workers| {
            let cfg = TrainConfig {
                workers,
                ..toy_cfg()
            };
            let mut tr = Trainer::new(toy_net(2), cfg).unwrap();
            let s = tr.train_epoch(&train, 0).unwrap();
            (s, tr.model.params)
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn single_frame_sequences_match_static_training() {
        let ds = toy_data(10, 3);
        let seqs = SequenceDataset::new(
            (0..ds.len()).map(|i| vec![ds.sample(i).to_vec()]).collect(),
            vec![6],
            ds.labels().to_vec(),
            2,
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..toy_cfg()
        };
        let mut a = Trainer::new(toy_net(5), cfg.clone()).unwrap();
        let mut b = Trainer::new(toy_net(5), cfg).unwrap();
        let sa = a.train_epoch(&ds, 0).unwrap();
        let sb = b.train_temporal(&seqs, 0).unwrap();
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(sa.accuracy, sb.accuracy);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::mnist_1fc().validate().is_ok());
        let bad = [
            TrainConfig {
                lambda: 0.0,
                ..TrainConfig::mnist_1fc()
            },
            TrainConfig {
                beta: 0.0,
                ..TrainConfig::mnist_1fc()
            },
            TrainConfig {
                n_perclass: 0,
                ..TrainConfig::mnist_1fc()
            },
            TrainConfig {
                weight_decay: 1e-3,
                ..TrainConfig::mnist_1fc()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
        let net = toy_net(0);
        assert!(Trainer::new(net, TrainConfig::mnist_1fc()).is_err());
    }
}
