//! One free and one nudged relaxation of a single digit, printing the
//! per-step layer statistics the trace log records.
//!
//! cargo run --release --example relax_traces

use std::path::Path;

use stoch_ep::data::{expand_label, load_idx};
use stoch_ep::dynamics::relax;
use stoch_ep::rng::SampleRng;
use stoch_ep::trainer::TrainConfig;
use stoch_ep::{Network, NetworkState, Result};

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    let cfg = TrainConfig::mnist_1fc();
    let net = Network::init("in:784 fc:512 fc:100".parse()?, cfg.kappa, cfg.seed);
    let x = test.sample(0);
    let y = expand_label(test.label(0), 10, 10);
    let rng = SampleRng::new(cfg.seed, 0);

    let free = cfg.free_phase().traced(None);
    let (fp, mut log) = relax(
        &net,
        x,
        &NetworkState::zeros(&net.topology),
        &free,
        None,
        &rng.derive(1),
    )?;
    let nudge = cfg.nudge_phase(cfg.beta).traced(None);
    let (nudged, tail) = relax(&net, x, &fp.state, &nudge, Some(&y), &rng.derive(2))?;
    log.append(tail);

    log.write_csv(std::io::stdout())?;
    println!(
        "free residual {:.4}, nudged residual {:.4}, phase boundary at step {:?}",
        fp.residual, nudged.residual, log.phase_boundary
    );
    Ok(())
}
