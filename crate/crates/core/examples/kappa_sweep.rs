//! Spike density of the 1FC net as κ grows, measured on untrained nets over
//! a small probe set.
//!
//! cargo run --release --example kappa_sweep

use std::path::Path;

use stoch_ep::data::load_idx;
use stoch_ep::metrics::{kappa_sweep, write_sweep_csv};
use stoch_ep::trainer::TrainConfig;
use stoch_ep::{Network, Result, Topology};

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let probe = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?
    .take(100);
    let topo: Topology = "in:784 fc:512 fc:100".parse()?;
    let points = kappa_sweep(
        |k| Ok(Network::init(topo.clone(), k, 1)),
        &[0.5, 1.0, 2.0, 4.0, 8.0],
        &TrainConfig::mnist_1fc(),
        &probe,
        &probe,
        0,
    )?;
    write_sweep_csv(&points, std::io::stdout())
}
