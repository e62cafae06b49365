// The convolutional presets are far too large to train here; these checks
// only show the topologies are expressible end to end.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stoch_ep::config::{Needs, RunConfig};
use stoch_ep::data::Dataset;
use stoch_ep::trainer::Trainer;
use stoch_ep::Network;

fn one_batch(preset: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../presets")
        .join(preset);
    let needs = Needs {
        topology: true,
        data: false,
        ifr: false,
    };
    let cfg = RunConfig::load(&path, needs).unwrap();
    let topo = cfg.topology.unwrap();
    let mut tc = cfg.train;
    tc.t_free = 4;
    tc.t_nudge = 2;
    tc.batch_size = 2;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let len: usize = topo.input_shape().iter().product();
    let images = (0..2 * len).map(|_| rng.random_range(0.0..1.0)).collect();
    let ds = Dataset::new(
        images,
        topo.input_shape().to_vec(),
        vec![0, 1],
        tc.n_classes,
    )
    .unwrap();

    let net = Network::init(topo, tc.kappa, tc.seed);
    let before = net.params.clone();
    let mut trainer = Trainer::new(net, tc).unwrap();
    let stats = trainer.train_epoch(&ds, 0).unwrap();
    assert!(stats.loss.is_finite());
    assert!(trainer.model.params.is_finite());
    assert_ne!(trainer.model.params, before);
}

#[test]
fn cifar_5c_trains_one_batch() {
    one_batch("cifar_5c.ini");
}

#[test]
fn gesture_3c_trains_one_batch() {
    one_batch("dvs_3c.ini");
}

#[test]
fn mnist_2c_trains_one_batch() {
    one_batch("mnist_2c.ini");
}
