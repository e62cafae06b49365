//! Online per-frame training on left/right moving bars. Each frame gets its
//! own free and nudged relaxation and an immediate weight update; the class
//! is read from output activity summed over frames.
//!
//! cargo run --release --example moving_bar

use stoch_ep::data::make_moving_bar;
use stoch_ep::trainer::{BiasMode, OptimizerKind, TrainConfig, Trainer};
use stoch_ep::{Network, Result};

fn main() -> Result<()> {
    let (train, test) = make_moving_bar(600, 5, 8, 1)?.split_tail(200)?;
    let cfg = TrainConfig {
        t_free: 30,
        t_nudge: 10,
        beta: 0.5,
        n_classes: 2,
        n_perclass: 10,
        bias_mode: BiasMode::RandomSign,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 3e-3,
        carry_state: false,
        ..TrainConfig::mnist_1fc()
    };
    let net = Network::init("in:2x8x8 fc:64 fc:20".parse()?, cfg.kappa, cfg.seed);
    let mut trainer = Trainer::new(net, cfg)?;
    for epoch in 0..10 {
        let tr = trainer.train_temporal(&train, epoch)?;
        let te = trainer.evaluate_temporal(&test, epoch)?;
        println!(
            "epoch {epoch}: train acc {:.3}  test acc {:.3}",
            tr.accuracy, te.accuracy
        );
    }
    Ok(())
}
