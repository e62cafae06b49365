//! Counter-based random streams.
//!
//! Every spike draw is addressed by `(seed, sample key, layer, step)`. The
//! ChaCha8 stream selector carries the hashed address, so draws do not depend
//! on which worker runs a sample or in what order samples are processed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a list of integers into a single 64-bit key.
pub fn mix_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Address of one stream inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub sample: u64,
    pub layer: u32,
    pub step: u32,
}

impl StreamId {
    fn key(&self) -> u64 {
        mix_key(&[self.sample, u64::from(self.layer), u64::from(self.step)])
    }
}

#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id.key());
        Self { rng }
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Stream factory bound to one sample; hands out per-(layer, step) streams.
#[derive(Debug, Clone, Copy)]
pub struct SampleRng {
    pub seed: u64,
    pub sample: u64,
}

impl SampleRng {
    pub fn new(seed: u64, sample: u64) -> Self {
        Self { seed, sample }
    }

    pub fn stream(&self, layer: usize, step: usize) -> RngStream {
        RngStream::new(
            self.seed,
            StreamId {
                sample: self.sample,
                layer: layer as u32,
                step: step as u32,
            },
        )
    }

    /// Derive an independent sample key, e.g. for a different phase.
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            sample: mix_key(&[self.sample, tag]),
        }
    }
}
