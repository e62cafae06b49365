//! Averaging the spike-sampled energy over many draws recovers the
//! deterministic rate-model energy.
//!
//! cargo run --release --example mean_field

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_ep::energy::{energy_det, energy_stoch};
use stoch_ep::linalg::Tensor;
use stoch_ep::rng::{RngStream, StreamId};
use stoch_ep::{Network, NetworkState, Result, Topology};

fn main() -> Result<()> {
    let topo: Topology = "in:5 fc:6 fc:3".parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let net = Network::init(topo.clone(), 2.0, 7);
    let state = NetworkState(
        topo.layer_shapes()[1..]
            .iter()
            .map(|s| Tensor::from_fn(s, |_| rng.random_range(-0.2..0.7)))
            .collect(),
    );
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
    let det = energy_det(&net, &x, &state)?;

    let mut stream = RngStream::new(
        1,
        StreamId {
            sample: 0,
            layer: 0,
            step: 0,
        },
    );
    let mut sum = 0.0;
    for n in 1..=100_000u32 {
        sum += energy_stoch(&net, &x, &state, &mut stream)?;
        if n.is_power_of_two() || n % 25_000 == 0 {
            let mean = sum / n as f64;
            println!("{n:>6} draws: mean {mean:+.6}  gap {:+.2e}", mean - det);
        }
    }
    println!("rate model:   {det:+.6}");
    Ok(())
}
