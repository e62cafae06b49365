//! Command-line front end: `stoch-ep {train|eval|gradcheck|stability|cost|sweep}`.
//!
//! Every command loads and validates its config before reading any data.
//! Exit codes: 0 success, 1 gradient check below threshold, 2 bad config or
//! input files, 3 divergence, 4 oracle did not converge, 5 checkpoint
//! version mismatch.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSource, Needs, RunConfig};
use crate::data::{expand_label, load_idx, make_moving_bar, Dataset, SequenceDataset};
use crate::dynamics::{
    mean_membranes, relax, relax_lif_lowpass, relax_lif_predictive, stability_report,
    StabilityReport, TraceLog,
};
use crate::error::{Error, Result};
use crate::metrics::{
    cost_report, error_signal, kappa_sweep, measure_activity, write_sweep_csv, CostModel,
    FiringStats,
};
use crate::model::{Network, NetworkState, Topology};
use crate::neuron::LowPassLifConfig;
use crate::oracle::{fd_gradient, smooth_toy, OracleConfig};
use crate::rng::SampleRng;
use crate::trainer::checkpoint::Checkpoint;
use crate::trainer::{
    ep_gradient_three_phase, ep_gradient_two_phase, eval_rng, BiasMode, EpochStats, TrainConfig,
    Trainer,
};

#[derive(Debug, Parser)]
#[command(
    name = "stoch-ep",
    version,
    about = "Train and analyse stochastic spiking networks with equilibrium propagation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// INI config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `run.out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.workers`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write per-epoch metrics and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Test-set accuracy of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare EP gradients with finite differences on small dense nets.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threshold: Option<f64>,
        /// Also report fidelity over `run.beta_sweep`.
        #[arg(long)]
        beta_sweep: bool,
    },
    /// Membrane stability of stochastic and LIF neurons on the same weights.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Operation counts and energy ratio against a dense network.
    Cost {
        #[command(flatten)]
        common: Common,
        /// Measure firing rates with this checkpoint instead of `run.ifr`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Firing density over κ, and output error signals over class widths.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Divergence { .. } | Error::NonFiniteGradient(_) => 3,
        Error::OracleUnavailable { .. } => 4,
        Error::CheckpointVersion { .. } => 5,
        _ => 2,
    }
}

/// Parse the process arguments and run; the binary's whole body.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load(common: &Common, needs: Needs, default_out: &str) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config, needs)?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.train.workers = w;
        cfg.train.validate()?;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(default_out));
    Ok((cfg, out))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| {
        Error::Config(format!(
            "cannot create output directory {}: {e}",
            out.display()
        ))
    })
}

pub fn dispatch(cmd: Command) -> Result<u8> {
    let need = |topology, data| Needs {
        topology,
        data,
        ifr: false,
    };
    match cmd {
        Command::Train {
            common,
            epochs,
            checkpoint,
        } => {
            let (mut cfg, out) = load(&common, need(true, true), "train")?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&cfg, &out, checkpoint.or(cfg.checkpoint.clone()).as_deref())?;
            Ok(0)
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = load(&common, need(false, true), "eval")?;
            let ckpt = checkpoint
                .or(cfg.checkpoint.clone())
                .ok_or_else(|| Error::Config("eval needs --checkpoint or run.checkpoint".into()))?;
            let stats = cmd_eval(&cfg, &ckpt, &out)?;
            println!(
                "test_accuracy={:.4} test_loss={:.6} samples={}",
                stats.accuracy, stats.loss, stats.samples
            );
            Ok(0)
        }
        Command::Gradcheck {
            common,
            threshold,
            beta_sweep,
        } => {
            let (mut cfg, out) = load(&common, need(true, false), "gradcheck")?;
            if let Some(t) = threshold {
                cfg.threshold = t;
            }
            let pass = cmd_gradcheck(&cfg, &out, beta_sweep)?;
            println!("{}", if pass { "PASS" } else { "FAIL" });
            Ok(if pass { 0 } else { 1 })
        }
        Command::Stability { common, checkpoint } => {
            let (cfg, out) = load(&common, need(true, true), "stability")?;
            let ckpt = checkpoint.or(cfg.checkpoint.clone());
            let report = cmd_stability(&cfg, &out, ckpt.as_deref())?;
            for s in &report.summaries {
                println!(
                    "{}: temporal_variance={} residual={:.4}",
                    s.model,
                    s.temporal_variance
                        .map_or("n/a".into(), |v| format!("{v:.6}")),
                    s.residual
                );
            }
            Ok(0)
        }
        Command::Cost { common, checkpoint } => {
            let (cfg, out) = load(&common, need(true, false), "cost")?;
            let ckpt = checkpoint.or(cfg.checkpoint.clone());
            let ratio = cmd_cost(&cfg, &out, ckpt.as_deref())?;
            println!("energy_ratio={ratio:.4}");
            Ok(0)
        }
        Command::Sweep { common } => {
            let (cfg, out) = load(&common, need(true, true), "sweep")?;
            cmd_sweep(&cfg, &out)?;
            Ok(0)
        }
    }
}

// ---------------------------------------------------------------------------
// Data

pub enum Loaded {
    Static {
        train: Dataset,
        test: Dataset,
    },
    Sequences {
        train: SequenceDataset,
        test: SequenceDataset,
    },
}

impl Loaded {
    pub fn sample_len(&self) -> usize {
        match self {
            Self::Static { train, .. } => train.sample_len(),
            Self::Sequences { train, .. } => train.frame_shape().iter().product(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Self::Static { train, .. } => train.n_classes(),
            Self::Sequences { train, .. } => train.n_classes(),
        }
    }
}

fn idx_pair(img: &Path, lab: &Path, img_key: &str, lab_key: &str) -> Result<Dataset> {
    for (p, k) in [(img, img_key), (lab, lab_key)] {
        if !p.is_file() {
            return Err(Error::Config(format!(
                "data.{k}: no such file {}",
                p.display()
            )));
        }
    }
    load_idx(img, lab)
}

pub fn load_data(src: &DataSource, seed: u64) -> Result<Loaded> {
    match src {
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let mut train = idx_pair(train_images, train_labels, "train_images", "train_labels")?;
            let mut test = idx_pair(test_images, test_labels, "test_images", "test_labels")?;
            if let Some(n) = train_limit {
                train = train.take(*n);
            }
            if let Some(n) = test_limit {
                test = test.take(*n);
            }
            Ok(Loaded::Static { train, test })
        }
        DataSource::MovingBar {
            samples,
            test_samples,
            frames,
            size,
        } => {
            let all = make_moving_bar(samples + test_samples, *frames, *size, seed)?;
            let (train, test) = all.split_tail(*test_samples)?;
            Ok(Loaded::Sequences { train, test })
        }
        DataSource::Toy => Err(Error::Config(
            "this command needs data.kind = idx or moving_bar".into(),
        )),
    }
}

fn static_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let src = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key data.kind".into()))?;
    match load_data(src, cfg.train.seed)? {
        Loaded::Static { train, test } => Ok((train, test)),
        Loaded::Sequences { .. } => Err(Error::Config("this command needs data.kind = idx".into())),
    }
}

fn topology(cfg: &RunConfig) -> Result<&Topology> {
    cfg.topology
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key model.topology".into()))
}

fn check_fits(
    topo: &Topology,
    train: &TrainConfig,
    sample_len: usize,
    n_classes: usize,
) -> Result<()> {
    if topo.output_len() != train.output_width() {
        return Err(Error::Config(format!(
            "model.topology ends in {} neurons, train.n_classes × train.n_perclass = {}",
            topo.output_len(),
            train.output_width()
        )));
    }
    if topo.layer_len(0) != sample_len {
        return Err(Error::Config(format!(
            "model.topology takes {} inputs, samples have {sample_len}",
            topo.layer_len(0)
        )));
    }
    if n_classes > train.n_classes {
        return Err(Error::Config(format!(
            "data has {n_classes} classes, train.n_classes = {}",
            train.n_classes
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval

fn metrics_header(n_layers: usize) -> String {
    let mut h = "epoch,train_loss,train_accuracy,test_loss,test_accuracy".to_string();
    for l in 1..=n_layers {
        h.push_str(&format!(",firing_l{l}"));
    }
    h
}

fn metrics_row(epoch: usize, tr: &EpochStats, te: &EpochStats) -> String {
    let mut r = format!(
        "{epoch},{},{},{},{}",
        tr.loss, tr.accuracy, te.loss, te.accuracy
    );
    for f in &tr.firing {
        r.push_str(&format!(",{f}"));
    }
    r
}

/// Train for `cfg.train.epochs`, writing `metrics.csv`, `checkpoint.bin`
/// (after every epoch) and `summary.txt` into `out`.
pub fn cmd_train(
    cfg: &RunConfig,
    out: &Path,
    resume: Option<&Path>,
) -> Result<Vec<(EpochStats, EpochStats)>> {
    let topo = topology(cfg)?.clone();
    if topo.output_len() != cfg.train.output_width() {
        check_fits(&topo, &cfg.train, topo.layer_len(0), 0)?;
    }
    let src = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key data.kind".into()))?;
    let resumed = resume.map(Checkpoint::load).transpose()?;
    let data = load_data(src, cfg.train.seed)?;
    check_fits(&topo, &cfg.train, data.sample_len(), data.n_classes())?;
    create_out(out)?;

    let (mut trainer, first_epoch) = match resumed {
        Some(c) => {
            if c.network.topology != topo {
                return Err(Error::Consistency(
                    "checkpoint topology differs from model.topology".into(),
                ));
            }
            let next = c.epoch as usize + 1;
            (
                Trainer::new(c.network, cfg.train.clone())?.with_optimizer(c.optimizer)?,
                next,
            )
        }
        None => (
            Trainer::new(
                Network::init(topo.clone(), cfg.train.kappa, cfg.train.seed),
                cfg.train.clone(),
            )?,
            0,
        ),
    };
    let save = |trainer: &Trainer, epoch: u64| {
        Checkpoint {
            network: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
            n_classes: cfg.train.n_classes,
            n_perclass: cfg.train.n_perclass,
            seed: cfg.train.seed,
            epoch,
        }
        .save(&out.join("checkpoint.bin"))
    };
    if cfg.train.epochs == 0 {
        save(&trainer, 0)?;
    }

    let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(csv, "{}", metrics_header(topo.layer_shapes().len() - 1))?;
    let mut history = Vec::new();
    for epoch in first_epoch..first_epoch + cfg.train.epochs {
        let t0 = Instant::now();
        let (tr, te) = match &data {
            Loaded::Static { train, test } => (
                trainer.train_epoch(train, epoch)?,
                trainer.evaluate(test, epoch)?,
            ),
            Loaded::Sequences { train, test } => (
                trainer.train_temporal(train, epoch)?,
                trainer.evaluate_temporal(test, epoch)?,
            ),
        };
        writeln!(csv, "{}", metrics_row(epoch, &tr, &te))?;
        csv.flush()?;
        save(&trainer, epoch as u64)?;
        println!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | test loss {:.4} acc {:.4} | {:.1}s",
            tr.loss,
            tr.accuracy,
            te.loss,
            te.accuracy,
            t0.elapsed().as_secs_f64()
        );
        history.push((tr, te));
    }
    let mut summary = File::create(out.join("summary.txt"))?;
    writeln!(summary, "topology = {topo}")?;
    writeln!(summary, "epochs = {}", history.len())?;
    if let Some((tr, te)) = history.last() {
        writeln!(summary, "final_train_accuracy = {}", tr.accuracy)?;
        writeln!(summary, "final_test_accuracy = {}", te.accuracy)?;
        let best = history.iter().map(|(_, t)| t.accuracy).fold(0.0, f64::max);
        writeln!(summary, "best_test_accuracy = {best}")?;
    }
    Ok(history)
}

/// Free-phase accuracy of a checkpoint on the configured test split.
/// κ and the output layout come from the checkpoint.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EpochStats> {
    let c = Checkpoint::load(checkpoint)?;
    let train = TrainConfig {
        kappa: c.network.kappa,
        n_classes: c.n_classes,
        n_perclass: c.n_perclass,
        ..cfg.train.clone()
    };
    let src = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("missing required key data.kind".into()))?;
    let data = load_data(src, cfg.train.seed)?;
    check_fits(
        &c.network.topology,
        &train,
        data.sample_len(),
        data.n_classes(),
    )?;
    let trainer = Trainer::new(c.network, train)?;
    let stats = match &data {
        Loaded::Static { test, .. } => trainer.evaluate(test, c.epoch as usize)?,
        Loaded::Sequences { test, .. } => trainer.evaluate_temporal(test, c.epoch as usize)?,
    };
    create_out(out)?;
    let mut f = File::create(out.join("eval.txt"))?;
    writeln!(
        f,
        "test_accuracy = {}\ntest_loss = {}\nsamples = {}",
        stats.accuracy, stats.loss, stats.samples
    )?;
    Ok(stats)
}

// ---------------------------------------------------------------------------
// gradcheck

/// Per-connection cosine similarity between the configured EP estimator and
/// finite differences on `run.toy_nets` kink-free nets. Writes
/// `gradcheck.csv`; true when every cosine reaches `run.threshold`.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path, beta_sweep: bool) -> Result<bool> {
    let topo = topology(cfg)?;
    if topo.output_len() != cfg.train.output_width() {
        check_fits(topo, &cfg.train, topo.layer_len(0), 0)?;
    }
    create_out(out)?;
    let ocfg = OracleConfig::default();
    let mut betas = vec![cfg.train.beta];
    if beta_sweep {
        betas.extend(
            cfg.beta_sweep
                .iter()
                .copied()
                .filter(|b| *b != cfg.train.beta),
        );
    }
    let mut csv = BufWriter::new(File::create(out.join("gradcheck.csv"))?);
    writeln!(csv, "net,beta,connection,cosine")?;
    let mut pass = true;
    let mut sweep_min = vec![f64::INFINITY; betas.len()];
    for n in 0..cfg.toy_nets {
        let p = smooth_toy(
            topo,
            cfg.train.kappa,
            cfg.weight_scale,
            cfg.train.seed + n as u64,
            5000,
            &ocfg,
        )?;
        let y = &p.y;
        let oracle = fd_gradient(&p.network, &p.x, y, &ocfg)?;
        for (bi, &beta) in betas.iter().enumerate() {
            let tc = TrainConfig {
                beta,
                ..cfg.train.clone()
            };
            let rng = SampleRng::new(cfg.train.seed, n as u64);
            let ep = match tc.bias_mode {
                BiasMode::ThreePhase => ep_gradient_three_phase(&p.network, &p.x, y, &tc, &rng)?,
                BiasMode::RandomSign => ep_gradient_two_phase(&p.network, &p.x, y, &tc, &rng, 1.0)?,
            };
            let cos = ep.grads.cosine(&oracle);
            for (k, c) in cos.iter().enumerate() {
                writeln!(csv, "{n},{beta},{},{c}", k + 1)?;
            }
            let min = cos.iter().copied().fold(f64::INFINITY, f64::min);
            sweep_min[bi] = sweep_min[bi].min(min);
            if bi == 0 {
                let shown: Vec<String> = cos.iter().map(|c| format!("{c:.5}")).collect();
                println!("net {n}: cosine per connection [{}]", shown.join(", "));
                pass &= cos.iter().all(|&c| c >= cfg.threshold);
            }
        }
    }
    if beta_sweep {
        let mut order: Vec<(f64, f64)> = betas.iter().copied().zip(sweep_min).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0));
        println!("beta  min_cosine");
        for (b, m) in &order {
            println!("{b:<5} {m:.6}");
        }
        let monotone = order.windows(2).all(|w| w[1].1 >= w[0].1);
        println!(
            "monotone improvement as beta shrinks: {}",
            if monotone { "yes" } else { "no" }
        );
    }
    Ok(pass)
}

// ---------------------------------------------------------------------------
// stability

/// Trace collections of the four neuron models, in panel order.
pub struct StabilityStudy {
    pub panels: Vec<(&'static str, Vec<TraceLog>)>,
}

pub const PANELS: [&str; 4] = [
    "stochastic",
    "lif_lowpass",
    "lif_predictive",
    "lif_no_prediction",
];

/// Free then nudge phase for the first `samples` items of `ds` under each
/// neuron model, recording layer `trace_layer`.
pub fn stability_study(
    model: &Network,
    ds: &Dataset,
    cfg: &TrainConfig,
    samples: usize,
    trace_layer: usize,
    lif_alpha: f64,
    lif_threshold: f64,
) -> Result<StabilityStudy> {
    let free = cfg.free_phase().traced(Some(trace_layer));
    let nudge = cfg.nudge_phase(cfg.beta).traced(Some(trace_layer));
    let phases = [free.clone(), nudge.clone()];
    let init = NetworkState::zeros(&model.topology);
    let mut panels: Vec<(&'static str, Vec<TraceLog>)> =
        PANELS.iter().map(|p| (*p, Vec::new())).collect();
    for i in 0..samples.min(ds.len()) {
        let x = ds.sample(i);
        let y = expand_label(ds.label(i), cfg.n_classes, cfg.n_perclass);
        let rng = eval_rng(cfg.seed, usize::MAX - 2, i, 0);
        let (fp, mut log) = relax(model, x, &init, &free, None, &rng.derive(1))?;
        let (_, tail) = relax(model, x, &fp.state, &nudge, Some(&y), &rng.derive(2))?;
        log.append(tail);
        panels[0].1.push(log);
        panels[1].1.push(relax_lif_lowpass(
            model,
            x,
            &phases,
            Some(&y),
            &LowPassLifConfig::default(),
        )?);
        panels[2]
            .1
            .push(relax_lif_predictive(model, x, &phases, Some(&y), lif_alpha, lif_threshold)?.0);
        panels[3]
            .1
            .push(relax_lif_predictive(model, x, &phases, Some(&y), 1.0, lif_threshold)?.0);
    }
    Ok(StabilityStudy { panels })
}

impl StabilityStudy {
    pub fn report(&self, window: usize) -> Result<StabilityReport> {
        let groups: Vec<(&str, &[TraceLog])> = self
            .panels
            .iter()
            .map(|(n, t)| (*n, t.as_slice()))
            .collect();
        stability_report(&groups, window)
    }

    /// One heatmap CSV per panel: `step,phase,boundary,xi_0..xi_{n-1}` of
    /// the trace-averaged membranes.
    pub fn write_panels(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (k, (name, traces)) in self.panels.iter().enumerate() {
            let path = out.join(format!("panel_{}_{name}.csv", (b'a' + k as u8) as char));
            let mut w = BufWriter::new(File::create(&path)?);
            let m = mean_membranes(traces)?;
            let first = &traces[0];
            let width = m.first().map_or(0, Vec::len);
            let cols: Vec<String> = (0..width).map(|i| format!("xi_{i}")).collect();
            writeln!(w, "step,phase,boundary,{}", cols.join(","))?;
            let boundary = first
                .phase_boundary
                .map(|b| b.to_string())
                .unwrap_or_default();
            for (t, row) in m.iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(
                    w,
                    "{t},{},{boundary},{}",
                    first.steps[t].phase,
                    vals.join(",")
                )?;
            }
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }
}

pub fn write_stability_summary(report: &StabilityReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "model,temporal_variance,residual,window")?;
    for s in &report.summaries {
        let tv = s
            .temporal_variance
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(w, "{},{tv},{},{}", s.model, s.residual, s.window)?;
    }
    let var = |m: &str| report.summary(m).and_then(|s| s.temporal_variance);
    if let (Some(a), Some(b)) = (var("stochastic"), var("lif_lowpass")) {
        writeln!(
            w,
            "# stochastic {} lif_lowpass",
            if a < b { "<" } else { ">=" }
        )?;
    }
    Ok(())
}

pub fn cmd_stability(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<StabilityReport> {
    let topo = topology(cfg)?.clone();
    let network = match checkpoint {
        Some(p) => Checkpoint::load(p)?.network,
        None => Network::init(topo.clone(), cfg.train.kappa, cfg.train.seed),
    };
    let (_, test) = static_data(cfg)?;
    check_fits(
        &network.topology,
        &cfg.train,
        test.sample_len(),
        test.n_classes(),
    )?;
    create_out(out)?;
    let train = TrainConfig {
        kappa: network.kappa,
        ..cfg.train.clone()
    };
    let study = stability_study(
        &network,
        &test,
        &train,
        cfg.stability_samples,
        cfg.trace_layer,
        cfg.lif_alpha,
        cfg.lif_threshold,
    )?;
    study.write_panels(out)?;
    let report = study.report(cfg.window)?;
    report.write_csv(BufWriter::new(File::create(out.join("stability.csv"))?))?;
    write_stability_summary(&report, File::create(out.join("stability_summary.csv"))?)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// cost / sweep

/// Energy ratio of the configured topology against the same network with
/// `run.fp_outputs` (default `train.n_classes`) plain outputs. Firing rates
/// come from `run.ifr`, or are measured with `checkpoint` on the test split.
pub fn cmd_cost(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<f64> {
    let topo = topology(cfg)?;
    let fp = topo.with_output_width(cfg.fp_outputs.unwrap_or(cfg.train.n_classes))?;
    let stats = match (&cfg.ifr, checkpoint) {
        (Some(r), _) => FiringStats::new(r.clone(), 0)?,
        (None, Some(p)) => {
            let c = Checkpoint::load(p)?;
            let (_, test) = static_data(cfg)?;
            let probe = test.take(cfg.sweep_probe.min(test.len()));
            let train = TrainConfig {
                kappa: c.network.kappa,
                n_classes: c.n_classes,
                n_perclass: c.n_perclass,
                ..cfg.train.clone()
            };
            measure_activity(&c.network, &probe, &train)?.firing_stats()
        }
        (None, None) => return Err(Error::Config("cost needs run.ifr or a checkpoint".into())),
    };
    let rep = cost_report(topo, &fp, &stats, &CostModel::default())?;
    create_out(out)?;
    rep.write_csv(BufWriter::new(File::create(out.join("cost.csv"))?))?;
    let mut f = File::create(out.join("cost_summary.txt"))?;
    writeln!(
        f,
        "fp_energy_pj = {}\nsnn_energy_pj = {}\nenergy_ratio = {}",
        rep.fp_energy_pj, rep.snn_energy_pj, rep.ratio
    )?;
    Ok(rep.ratio)
}

/// κ sweep (`sweep.csv`) and, when `run.perclass_sweep` is set, output
/// error-signal statistics per class width (`error_signal.csv`).
pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let topo = topology(cfg)?.clone();
    let (train, test) = static_data(cfg)?;
    check_fits(&topo, &cfg.train, train.sample_len(), train.n_classes())?;
    create_out(out)?;
    let probe = test.take(cfg.sweep_probe.min(test.len()));
    let seed = cfg.train.seed;
    let points = kappa_sweep(
        |k| Ok(Network::init(topo.clone(), k, seed)),
        &cfg.kappas,
        &cfg.train,
        &train,
        &probe,
        cfg.sweep_epochs,
    )?;
    for p in &points {
        println!("kappa {:<4} density {:.4}", p.kappa, p.density);
    }
    write_sweep_csv(
        &points,
        BufWriter::new(File::create(out.join("sweep.csv"))?),
    )?;

    if !cfg.perclass_sweep.is_empty() {
        let mut w = BufWriter::new(File::create(out.join("error_signal.csv"))?);
        writeln!(
            w,
            "n_perclass,summed_error,nonzero_fraction,nudge_shift_wrong,wrong,samples"
        )?;
        for &n in &cfg.perclass_sweep {
            let tc = TrainConfig {
                n_perclass: n,
                ..cfg.train.clone()
            };
            let net = Network::init(topo.with_output_width(tc.output_width())?, tc.kappa, seed);
            let mut trainer = Trainer::new(net, tc.clone())?;
            for e in 0..cfg.sweep_epochs {
                trainer.train_epoch(&train, e)?;
            }
            let s = error_signal(&trainer.model, &probe, &tc)?;
            println!(
                "n_perclass {n:<4} summed error {:.4} nudge shift {:.5}",
                s.summed_error, s.nudge_shift_wrong
            );
            writeln!(
                w,
                "{n},{},{},{},{},{}",
                s.summed_error, s.nonzero_fraction, s.nudge_shift_wrong, s.wrong, s.samples
            )?;
        }
    }
    Ok(())
}
