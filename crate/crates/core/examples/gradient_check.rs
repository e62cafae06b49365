//! EP gradients against finite differences of the loss at the free fixed
//! point, on small dense nets relaxed in mean-field mode.
//!
//! cargo run --release --example gradient_check

use stoch_ep::oracle::{fd_gradient, smooth_toy, OracleConfig};
use stoch_ep::rng::SampleRng;
use stoch_ep::trainer::{
    ep_gradient_three_phase, ep_gradient_two_phase, BiasMode, RelaxMode, TrainConfig,
};
use stoch_ep::{Result, Topology};

fn main() -> Result<()> {
    let topo: Topology = "in:4 fc:8 fc:4".parse()?;
    let ocfg = OracleConfig::default();
    println!("net  beta   two-phase cos      three-phase cos");
    for seed in 0..3 {
        let p = smooth_toy(&topo, 1.0, 0.6, seed, 5000, &ocfg)?;
        let oracle = fd_gradient(&p.network, &p.x, &p.y, &ocfg)?;
        for beta in [0.5, 0.1, 0.01] {
            let cfg = TrainConfig {
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
            let rng = SampleRng::new(0, 0);
            let two = ep_gradient_two_phase(&p.network, &p.x, &p.y, &cfg, &rng, 1.0)?;
            let three = ep_gradient_three_phase(&p.network, &p.x, &p.y, &cfg, &rng)?;
            println!(
                "{seed}    {beta:<5}  {:.5?}  {:.5?}",
                two.grads.cosine(&oracle),
                three.grads.cosine(&oracle)
            );
        }
    }
    Ok(())
}
