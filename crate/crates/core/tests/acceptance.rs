//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion.
//! Set `STOCH_EP_STRICT_ACCEPTANCE=1` to exit non-zero when any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_ep::cli::{cmd_train, stability_study};
use stoch_ep::config::{Needs, RunConfig};
use stoch_ep::data::{load_idx, make_moving_bar, Dataset, SequenceDataset};
use stoch_ep::energy::{energy_det, energy_stoch};
use stoch_ep::linalg::{conv2d, conv2d_adjoint, maxpool, unpool, Tensor};
use stoch_ep::metrics::{energy_ratio, kappa_sweep, CostModel, FiringStats};
use stoch_ep::oracle::{fd_gradient, smooth_toy, OracleConfig};
use stoch_ep::rng::{RngStream, SampleRng, StreamId};
use stoch_ep::trainer::checkpoint::Checkpoint;
use stoch_ep::trainer::{ep_gradient_three_phase, BiasMode, RelaxMode, TrainConfig, Trainer};
use stoch_ep::{Network, NetworkState, Topology};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(name: &str, needs: Needs) -> RunConfig {
    RunConfig::load(&root().join("presets").join(name), needs).expect("preset loads")
}

const ALL: Needs = Needs {
    topology: true,
    data: true,
    ifr: false,
};

// 1 -------------------------------------------------------------------------

fn mean_field_equivalence() -> Outcome {
    let topo: Topology = "in:5 fc:6 fc:3".parse().unwrap();
    let draws = 10_000;
    let mut inside = 0;
    for config in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + config);
        let mut net = Network::init(topo.clone(), rng.random_range(0.5..3.0), config);
        for t in &mut net.params.0 {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let state = NetworkState(
            (1..topo.layer_shapes().len())
                .map(|l| Tensor::from_fn(&topo.layer_shapes()[l], |_| rng.random_range(-0.5..1.5)))
                .collect(),
        );
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let det = energy_det(&net, &x, &state).unwrap();
        let mut stream = RngStream::new(
            config,
            StreamId {
                sample: 77,
                layer: 0,
                step: 0,
            },
        );
        let samples: Vec<f64> = (0..draws)
            .map(|_| energy_stoch(&net, &x, &state, &mut stream).unwrap())
            .collect();
        let mean = samples.iter().sum::<f64>() / draws as f64;
        let var = samples.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        if (mean - det).abs() <= 3.0 * se {
            inside += 1;
        }
    }
    outcome(inside >= 48, format!("{inside}/50 within 3 SE"))
}

// 2 -------------------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let topo: Topology = "in:4 fc:8 fc:4".parse().unwrap();
    let ocfg = OracleConfig::default();
    let cfg = |beta| TrainConfig {
        lambda: 0.5,
        t_free: 500,
        t_nudge: 500,
        beta,
        kappa: 1.0,
        n_classes: 4,
        n_perclass: 1,
        bias_mode: BiasMode::ThreePhase,
        relax_mode: RelaxMode::MeanField,
        ..TrainConfig::mnist_1fc()
    };
    let mut worst = f64::INFINITY;
    let mut monotone = true;
    for seed in 0..4 {
        let p = smooth_toy(&topo, 1.0, 0.6, seed, 5000, &ocfg).unwrap();
        let oracle = fd_gradient(&p.network, &p.x, &p.y, &ocfg).unwrap();
        let mins: Vec<f64> = [0.5, 0.1, 0.01]
            .iter()
            .map(|&b| {
                let g =
                    ep_gradient_three_phase(&p.network, &p.x, &p.y, &cfg(b), &SampleRng::new(0, 0))
                        .unwrap();
                g.grads
                    .cosine(&oracle)
                    .into_iter()
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        worst = worst.min(mins[2]);
        monotone &= mins[0] <= mins[1] && mins[1] <= mins[2];
    }
    outcome(
        worst >= 0.95 && monotone,
        format!("min cosine at beta=0.01: {worst:.6}, monotone over beta: {monotone}"),
    )
}

// 3 and 8 -------------------------------------------------------------------

struct Smoke {
    accuracy: f64,
    metrics: Vec<u8>,
    checkpoint: PathBuf,
}

fn smoke_run(workers: usize, out: &Path) -> Smoke {
    let mut cfg = preset("mnist_1fc.ini", ALL);
    cfg.train.epochs = 15;
    cfg.train.workers = workers;
    let history = cmd_train(&cfg, out, None).expect("smoke training");
    Smoke {
        accuracy: history.last().unwrap().1.accuracy,
        metrics: fs::read(out.join("metrics.csv")).unwrap(),
        checkpoint: out.join("checkpoint.bin"),
    }
}

// 4 -------------------------------------------------------------------------

fn stability(checkpoint: &Path, out: &Path) -> Outcome {
    let cfg = preset("mnist_1fc.ini", ALL);
    let net = Checkpoint::load(checkpoint).unwrap().network;
    let test = mnist_test();
    let study = stability_study(
        &net,
        &test,
        &cfg.train,
        100,
        1,
        cfg.lif_alpha,
        cfg.lif_threshold,
    )
    .unwrap();
    let paths = study.write_panels(out).unwrap();
    let report = study.report(10).unwrap();
    let stoch = report.summary("stochastic").unwrap();
    let low = report.summary("lif_lowpass").unwrap();
    let (vs, vl) = (
        stoch.temporal_variance.unwrap(),
        low.temporal_variance.unwrap(),
    );
    outcome(
        vs < vl && stoch.residual <= 0.05 && paths.len() == 4,
        format!(
            "variance stochastic {vs:.5} vs low-pass LIF {vl:.5}, stochastic residual {:.4}, {} panels",
            stoch.residual,
            paths.len()
        ),
    )
}

fn mnist_test() -> Dataset {
    let d = root().join("data/mnist");
    load_idx(
        &d.join("t10k-images-idx3-ubyte"),
        &d.join("t10k-labels-idx1-ubyte"),
    )
    .unwrap()
}

fn mnist_train() -> Dataset {
    let d = root().join("data/mnist");
    load_idx(
        &d.join("train-images-idx3-ubyte"),
        &d.join("train-labels-idx1-ubyte"),
    )
    .unwrap()
}

// 5 -------------------------------------------------------------------------

fn cost_model() -> Outcome {
    let snn: Topology = "in:784 fc:512 fc:512 fc:700".parse().unwrap();
    let fp = snn.with_output_width(10).unwrap();
    let stats = FiringStats::new(vec![0.21, 0.19, 0.12], 128).unwrap();
    let r = energy_ratio(&snn, &fp, &stats, &CostModel::default()).unwrap();
    outcome((17.1..=20.9).contains(&r), format!("energy ratio {r:.3}"))
}

// 6 -------------------------------------------------------------------------

fn kappa_sparsity() -> Outcome {
    let cfg = preset("mnist_1fc.ini", ALL);
    let topo = cfg.topology.clone().unwrap();
    let train = mnist_train().take(2000);
    let probe = mnist_test().take(200);
    let seed = cfg.train.seed;
    let points = kappa_sweep(
        |k| Ok(Network::init(topo.clone(), k, seed)),
        &[0.5, 1.0, 2.0, 4.0],
        &cfg.train,
        &train,
        &probe,
        1,
    )
    .unwrap();
    let d: Vec<f64> = points.iter().map(|p| p.density).collect();
    let monotone = d.windows(2).all(|w| w[1] >= w[0]);
    let band = |v: f64| (0.02..=0.40).contains(&v);
    outcome(
        monotone && band(d[0]) && band(d[3]),
        format!("density over kappa 0.5/1/2/4: {d:.4?}"),
    )
}

// 7 -------------------------------------------------------------------------

fn temporal() -> Outcome {
    let cfg = preset("moving_bar.ini", ALL);
    let (train, test) = bar_data(&cfg);
    let topo = cfg.topology.clone().unwrap();
    let run = |carry: bool| {
        let tc = TrainConfig {
            carry_state: carry,
            ..cfg.train.clone()
        };
        let mut t = Trainer::new(Network::init(topo.clone(), tc.kappa, tc.seed), tc).unwrap();
        for e in 0..20 {
            t.train_temporal(&train, e).unwrap();
        }
        t.evaluate_temporal(&test, 20).unwrap().accuracy
    };
    let chosen = run(cfg.train.carry_state);
    let other = run(!cfg.train.carry_state);
    let single = single_frame_matches_static(&cfg);
    let label = |c: bool| if c { "carry" } else { "reset" };
    outcome(
        chosen >= 0.80 && single,
        format!(
            "test accuracy {chosen:.3} ({}; {} gives {other:.3}), single-frame sequences match static training bitwise: {single}",
            label(cfg.train.carry_state),
            label(!cfg.train.carry_state)
        ),
    )
}

fn bar_data(cfg: &RunConfig) -> (SequenceDataset, SequenceDataset) {
    match stoch_ep::cli::load_data(cfg.data.as_ref().unwrap(), cfg.train.seed).unwrap() {
        stoch_ep::cli::Loaded::Sequences { train, test } => (train, test),
        _ => unreachable!(),
    }
}

fn single_frame_matches_static(cfg: &RunConfig) -> bool {
    let seqs = make_moving_bar(40, 2, 8, 5).unwrap();
    let frames: Vec<Vec<Vec<f64>>> = (0..seqs.len())
        .map(|i| vec![seqs.frames(i)[1].clone()])
        .collect();
    let labels = (0..seqs.len()).map(|i| seqs.label(i)).collect();
    let one = SequenceDataset::new(frames, vec![2, 8, 8], labels, 2).unwrap();
    let flat = one.flatten_frames().unwrap();
    let tc = TrainConfig {
        batch_size: 1,
        ..cfg.train.clone()
    };
    let topo = cfg.topology.clone().unwrap();
    let mut a = Trainer::new(Network::init(topo.clone(), tc.kappa, 3), tc.clone()).unwrap();
    let mut b = Trainer::new(Network::init(topo, tc.kappa, 3), tc).unwrap();
    for e in 0..2 {
        a.train_epoch(&flat, e).unwrap();
        b.train_temporal(&one, e).unwrap();
    }
    a.model.params == b.model.params
}

// 9 -------------------------------------------------------------------------

fn conv_naive(x: &Tensor, k: &Tensor, s: usize, p: usize) -> Vec<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                out[(co * oh + oy) * ow + ox] += k.data()
                                    [((co * cin + ci) * kh + ky) * kw + kx]
                                    * x.data()[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn linalg_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_adj: f64 = 0.0;
    let mut worst_naive: f64 = 0.0;
    let mut unpool_ok = true;
    for _ in 0..200 {
        let cin = rng.random_range(1..4);
        let cout = rng.random_range(1..4);
        let k = rng.random_range(1..5);
        let s = rng.random_range(1..3);
        let p = rng.random_range(0..k);
        let h = rng.random_range(k..k + 7);
        let w = rng.random_range(k..k + 7);
        let x = Tensor::from_fn(&[cin, h, w], |_| rng.random_range(-1.0..1.0));
        let ker = Tensor::from_fn(&[cout, cin, k, k], |_| rng.random_range(-1.0..1.0));
        let y = conv2d(&x, &ker, s, p).unwrap();
        let g = Tensor::from_fn(y.shape(), |_| rng.random_range(-1.0..1.0));
        let back = conv2d_adjoint(&g, &ker, s, p, (h, w)).unwrap();
        let (lhs, rhs) = (y.dot(&g), x.dot(&back));
        worst_adj = worst_adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
        for (a, b) in y.data().iter().zip(conv_naive(&x, &ker, s, p)) {
            worst_naive = worst_naive.max((a - b).abs());
        }
        let win = rng.random_range(1..4).min(h).min(w);
        let pos = x.map(f64::abs);
        let (pooled, idx) = maxpool(&pos, win, win).unwrap();
        let up = unpool(&pooled, &idx, x.shape()).unwrap();
        let (again, _) = maxpool(&up, win, win).unwrap();
        let back_at = idx
            .indices
            .iter()
            .zip(pooled.data())
            .all(|(&i, &v)| up.data()[i] == v);
        unpool_ok &= back_at && again == pooled;
    }
    outcome(
        worst_adj <= 1e-12 && worst_naive <= 1e-12 && unpool_ok,
        format!("adjoint rel err {worst_adj:.1e}, naive conv max err {worst_naive:.1e}, unpool round trip {unpool_ok}"),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = 0;
    let mut report = |n: u32, name: &str, t: Instant, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {n} {name}: {} ({:.1}s)",
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failures += usize::from(!o.pass);
    };

    let t = Instant::now();
    report(1, "mean-field equivalence", t, mean_field_equivalence());
    let t = Instant::now();
    report(2, "gradient fidelity", t, gradient_fidelity());

    let t = Instant::now();
    let a = smoke_run(1, &tmp.path().join("smoke_w1"));
    report(
        3,
        "MNIST smoke training",
        t,
        outcome(
            a.accuracy >= 0.92,
            format!("test accuracy {:.4}", a.accuracy),
        ),
    );

    let t = Instant::now();
    let panels = tmp.path().join("stability");
    fs::create_dir_all(&panels).unwrap();
    report(
        4,
        "stability ordering",
        t,
        stability(&a.checkpoint, &panels),
    );
    let t = Instant::now();
    report(5, "cost model", t, cost_model());
    let t = Instant::now();
    report(6, "kappa sparsity", t, kappa_sparsity());
    let t = Instant::now();
    report(7, "temporal loop", t, temporal());

    let t = Instant::now();
    let b = smoke_run(2, &tmp.path().join("smoke_w2"));
    report(
        8,
        "determinism",
        t,
        outcome(
            a.metrics == b.metrics,
            format!(
                "metrics CSV identical for workers 1 and 2: {}",
                a.metrics == b.metrics
            ),
        ),
    );
    let t = Instant::now();
    report(9, "linalg oracles", t, linalg_oracles());

    if failures > 0 {
        println!("{failures} criteria failed");
        if std::env::var_os("STOCH_EP_STRICT_ACCEPTANCE").is_some() {
            std::process::exit(1);
        }
    }
}
