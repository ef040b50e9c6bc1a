//! Seeded random streams.
//!
//! Every random quantity is drawn from a ChaCha20 stream selected by
//! `(seed, stream)`, so each matrix of an instance can be regenerated on its
//! own and the solver's jitter never shares state with the generator.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dictionary = 1,
    Signal = 2,
    Noise = 3,
    SideNoise = 4,
    Jitter = 5,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}
