//! Train the one-hidden-layer MNIST net on a slice of the bundled data.
//!
//! cargo run --release --example train_mnist -- [epochs] [train_samples]

use std::path::Path;

use stoch_ep::data::load_idx;
use stoch_ep::trainer::{TrainConfig, Trainer};
use stoch_ep::{Network, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(3, |a| a.parse().expect("epochs"));
    let n: usize = args
        .next()
        .map_or(2000, |a| a.parse().expect("train_samples"));

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let train = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?
    .take(n);
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?
    .take(1000);

    let cfg = TrainConfig::mnist_1fc();
    let net = Network::init("in:784 fc:512 fc:100".parse()?, cfg.kappa, cfg.seed);
    let mut trainer = Trainer::new(net, cfg)?;
    for epoch in 0..epochs {
        let tr = trainer.train_epoch(&train, epoch)?;
        let te = trainer.evaluate(&test, epoch)?;
        println!(
            "epoch {epoch}: train acc {:.3}, test acc {:.3}, firing {:.3?}",
            tr.accuracy, te.accuracy, tr.firing
        );
    }
    Ok(())
}
