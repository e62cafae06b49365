//! Membrane traces of the stochastic network next to three deterministic LIF
//! baselines, on MNIST digits with a freshly initialized 1FC net. Writes the
//! panel CSVs to `runs/stability_example`.
//!
//! cargo run --release --example stability

use std::fs;
use std::path::{Path, PathBuf};

use stoch_ep::cli::stability_study;
use stoch_ep::data::load_idx;
use stoch_ep::trainer::TrainConfig;
use stoch_ep::{Network, Result};

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    let cfg = TrainConfig::mnist_1fc();
    let net = Network::init("in:784 fc:512 fc:100".parse()?, cfg.kappa, cfg.seed);

    let study = stability_study(&net, &test, &cfg, 20, 1, 0.5, 0.5)?;
    let report = study.report(10)?;
    for s in &report.summaries {
        println!(
            "{:<18} variance over last 10 free steps {:>10.6}  residual {:.4}",
            s.model,
            s.temporal_variance.unwrap_or(f64::NAN),
            s.residual
        );
    }
    let out = PathBuf::from("runs/stability_example");
    fs::create_dir_all(&out)?;
    for p in study.write_panels(&out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
