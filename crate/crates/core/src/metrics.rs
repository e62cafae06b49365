//! Operation counting, energy estimates, firing-density sweeps and
//! output error-signal diagnostics.
//!
//! Counts are per relaxation step. A connection's accumulate count is its
//! multiply-accumulate count scaled by the firing rate of the layer feeding
//! it, since only incoming spikes trigger work.

use std::io::Write;

use crate::data::{expand_label, Dataset};
use crate::error::{Error, Result};
use crate::model::{Connection, Network, NetworkState, Topology};
use crate::trainer::{eval_rng, predict_class, run_phases, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub energy_per_ac: f64,
    pub energy_per_mac: f64,
}

impl Default for CostModel {
    /// 45 nm CMOS figures in picojoules.
    fn default() -> Self {
        Self {
            energy_per_ac: 0.9,
            energy_per_mac: 4.6,
        }
    }
}

/// Mean firing rate of every layer feeding a connection (index 0 is the input).
#[derive(Debug, Clone, PartialEq)]
pub struct FiringStats {
    pub rates: Vec<f64>,
    pub samples: usize,
}

impl FiringStats {
    pub fn new(rates: Vec<f64>, samples: usize) -> Result<Self> {
        if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Consistency(format!(
                "firing rate {r} outside [0, 1]"
            )));
        }
        Ok(Self { rates, samples })
    }
}

fn connection_macs(conn: &Connection) -> u64 {
    match conn {
        Connection::Dense {
            in_features,
            out_features,
        } => (in_features * out_features) as u64,
        Connection::Conv {
            in_shape,
            conv_shape,
            kernel,
            ..
        } => (in_shape[0] * kernel * kernel * conv_shape[0] * conv_shape[1] * conv_shape[2]) as u64,
    }
}

/// Multiply-accumulates per connection for one pass; doubled when the
/// feedback direction is counted as well.
pub fn mac_count_fp(topology: &Topology, bidirectional: bool) -> Vec<u64> {
    let k = if bidirectional { 2 } else { 1 };
    topology
        .connections()
        .iter()
        .map(|c| k * connection_macs(c))
        .collect()
}

pub fn ac_count_snn(
    topology: &Topology,
    stats: &FiringStats,
    bidirectional: bool,
) -> Result<Vec<f64>> {
    let macs = mac_count_fp(topology, bidirectional);
    if stats.rates.len() < macs.len() {
        return Err(Error::Consistency(format!(
            "{} firing rates for {} connections",
            stats.rates.len(),
            macs.len()
        )));
    }
    Ok(macs
        .iter()
        .zip(&stats.rates)
        .map(|(&m, &r)| r * m as f64)
        .collect())
}

/// `(MAC_fp · E_mac) / (AC_snn · E_ac)`: the dense network with plain
/// outputs against the spiking network with its widened output layer.
pub fn energy_ratio(
    topology_snn: &Topology,
    topology_fp: &Topology,
    stats: &FiringStats,
    cost: &CostModel,
) -> Result<f64> {
    let fp: u64 = mac_count_fp(topology_fp, true).iter().sum();
    let snn: f64 = ac_count_snn(topology_snn, stats, true)?.iter().sum();
    let denom = snn * cost.energy_per_ac;
    if denom <= 0.0 {
        return Err(Error::UndefinedRatio(
            "spiking network performs no accumulates".into(),
        ));
    }
    Ok(fp as f64 * cost.energy_per_mac / denom)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub layer: String,
    pub mac: u64,
    pub ac: f64,
    pub ifr: f64,
    pub energy_pj: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Spiking network, one row per connection, then a `total` row.
    pub rows: Vec<CostRow>,
    pub fp_energy_pj: f64,
    pub snn_energy_pj: f64,
    pub ratio: f64,
}

pub fn cost_report(
    topology_snn: &Topology,
    topology_fp: &Topology,
    stats: &FiringStats,
    cost: &CostModel,
) -> Result<CostReport> {
    let macs = mac_count_fp(topology_snn, true);
    let acs = ac_count_snn(topology_snn, stats, true)?;
    let mut rows: Vec<CostRow> = macs
        .iter()
        .zip(&acs)
        .enumerate()
        .map(|(i, (&mac, &ac))| CostRow {
            layer: format!("{}", i + 1),
            mac,
            ac,
            ifr: stats.rates[i],
            energy_pj: ac * cost.energy_per_ac,
        })
        .collect();
    let snn_energy_pj: f64 = rows.iter().map(|r| r.energy_pj).sum();
    rows.push(CostRow {
        layer: "total".into(),
        mac: macs.iter().sum(),
        ac: acs.iter().sum(),
        ifr: f64::NAN,
        energy_pj: snn_energy_pj,
    });
    let fp_energy_pj =
        mac_count_fp(topology_fp, true).iter().sum::<u64>() as f64 * cost.energy_per_mac;
    Ok(CostReport {
        ratio: energy_ratio(topology_snn, topology_fp, stats, cost)?,
        rows,
        fp_energy_pj,
        snn_energy_pj,
    })
}

impl CostReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "layer,mac,ac,ifr,energy_pj")?;
        for r in &self.rows {
            let ifr = if r.ifr.is_nan() {
                String::new()
            } else {
                r.ifr.to_string()
            };
            writeln!(w, "{},{},{},{},{}", r.layer, r.mac, r.ac, ifr, r.energy_pj)?;
        }
        Ok(())
    }
}

/// Spiking activity during the free and nudge phases on `probe`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    /// Input rate first, then the mean spike fraction of each layer.
    pub rates: Vec<f64>,
    /// Spikes per neuron per step over all non-input neurons.
    pub density: f64,
    pub samples: usize,
}

impl Activity {
    pub fn firing_stats(&self) -> FiringStats {
        FiringStats {
            rates: self.rates.clone(),
            samples: self.samples,
        }
    }
}

pub fn measure_activity(model: &Network, probe: &Dataset, cfg: &TrainConfig) -> Result<Activity> {
    let n_layers = model.topology.layer_shapes().len() - 1;
    let sizes: Vec<f64> = (1..=n_layers)
        .map(|l| model.topology.layer_len(l) as f64)
        .collect();
    let total: f64 = sizes.iter().sum();
    let init = NetworkState::zeros(&model.topology);
    let mut layer = vec![0.0; n_layers];
    let mut input = 0.0;
    let mut steps = 0.0;
    for i in 0..probe.len() {
        let x = probe.sample(i);
        input += x.iter().sum::<f64>() / x.len() as f64;
        let y = expand_label(probe.label(i), cfg.n_classes, cfg.n_perclass);
        let rng = eval_rng(cfg.seed, usize::MAX, i, 0);
        let ph = run_phases(model, x, &y, cfg, &rng, &init, &[cfg.beta])?;
        for fp in std::iter::once(&ph.free).chain(ph.nudged.iter().map(|(_, f)| f)) {
            let w = fp.steps_taken as f64;
            layer
                .iter_mut()
                .zip(&fp.activity)
                .for_each(|(l, a)| *l += w * a);
            steps += w;
        }
    }
    let steps = steps.max(1.0);
    layer.iter_mut().for_each(|l| *l /= steps);
    let density = layer.iter().zip(&sizes).map(|(a, n)| a * n).sum::<f64>() / total;
    let mut rates = vec![input / probe.len().max(1) as f64];
    rates.extend(layer);
    Ok(Activity {
        rates,
        density,
        samples: probe.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub kappa: f64,
    pub density: f64,
    pub test_accuracy: Option<f64>,
}

/// For each κ: build a fresh network, train it `epochs` times over `train`
/// (0 = relax only), then measure firing density on `probe`.
pub fn kappa_sweep(
    factory: impl Fn(f64) -> Result<Network>,
    kappas: &[f64],
    base: &TrainConfig,
    train: &Dataset,
    probe: &Dataset,
    epochs: usize,
) -> Result<Vec<SweepPoint>> {
    if kappas.is_empty() {
        return Err(Error::Contract(
            "kappa sweep needs at least one value".into(),
        ));
    }
    let mut out = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let cfg = TrainConfig {
            kappa,
            ..base.clone()
        };
        let mut trainer = Trainer::new(factory(kappa)?, cfg.clone())?;
        for e in 0..epochs {
            trainer.train_epoch(train, e)?;
        }
        let test_accuracy = if epochs > 0 {
            Some(trainer.evaluate(probe, epochs)?.accuracy)
        } else {
            None
        };
        out.push(SweepPoint {
            kappa,
            density: measure_activity(&trainer.model, probe, &cfg)?.density,
            test_accuracy,
        });
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], mut w: W) -> Result<()> {
    writeln!(w, "kappa,density,test_accuracy")?;
    for p in points {
        let acc = p.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", p.kappa, p.density, acc)?;
    }
    Ok(())
}

/// Output error signal at the free fixed point and the response to nudging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSignalStats {
    /// Mean over samples of `Σ_out |ŷ − ξ*_out|`.
    pub summed_error: f64,
    /// Fraction of output neurons with `|ŷ − ξ*_out| > 1e-6`.
    pub nonzero_fraction: f64,
    /// Mean `|ξ^β_out − ξ*_out|` per output neuron on misclassified samples.
    pub nudge_shift_wrong: f64,
    pub wrong: usize,
    pub samples: usize,
}

pub fn error_signal(model: &Network, ds: &Dataset, cfg: &TrainConfig) -> Result<ErrorSignalStats> {
    let init = NetworkState::zeros(&model.topology);
    let (mut summed, mut nonzero, mut shift, mut wrong, mut outputs) =
        (0.0, 0usize, 0.0, 0usize, 0usize);
    for i in 0..ds.len() {
        let y = expand_label(ds.label(i), cfg.n_classes, cfg.n_perclass);
        let rng = eval_rng(cfg.seed, usize::MAX - 1, i, 0);
        let ph = run_phases(model, ds.sample(i), &y, cfg, &rng, &init, &[cfg.beta])?;
        let free = ph.free.output().data();
        let nudged = ph.nudged[0].1.output().data();
        for (f, t) in free.iter().zip(&y) {
            let e = (t - f).abs();
            summed += e;
            nonzero += usize::from(e > 1e-6);
        }
        outputs += free.len();
        if predict_class(free, cfg.n_classes, cfg.n_perclass) != ds.label(i) {
            wrong += 1;
            shift += free
                .iter()
                .zip(nudged)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / free.len() as f64;
        }
    }
    Ok(ErrorSignalStats {
        summed_error: summed / ds.len().max(1) as f64,
        nonzero_fraction: nonzero as f64 / outputs.max(1) as f64,
        nudge_shift_wrong: if wrong > 0 { shift / wrong as f64 } else { 0.0 },
        wrong,
        samples: ds.len(),
    })
}
