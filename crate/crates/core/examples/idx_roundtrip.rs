//! Read the bundled MNIST IDX files, write a subset back out and read it
//! again.
//!
//! cargo run --release --example idx_roundtrip

use std::path::Path;

use stoch_ep::data::{load_idx, write_idx};
use stoch_ep::Result;

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let ds = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let mut counts = vec![0usize; ds.n_classes()];
    ds.labels().iter().for_each(|&l| counts[l] += 1);
    println!("{} images of shape {:?}", ds.len(), ds.sample_shape());
    println!("per class: {counts:?}");

    let tmp = std::env::temp_dir().join("stoch_ep_idx_example");
    std::fs::create_dir_all(&tmp)?;
    let (img, lab) = (tmp.join("images"), tmp.join("labels"));
    let head = ds.take(100);
    write_idx(&head, &img, &lab)?;
    assert_eq!(load_idx(&img, &lab)?, head);
    println!("round trip of 100 images through {} ok", tmp.display());
    Ok(())
}
