//! Splittable seeds.
//!
//! Every random quantity in an experiment is drawn from its own ChaCha stream.
//! A [`Seed`] is split by mixing in tags, so (realization, period, noise
//! source) triples map to independent, reproducible generators regardless of
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Random sources used throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Phases,
    ProcessNoise,
    OutputNoise,
    InputNoise,
    Excitation,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Phases => 0x7068_6173_6573,
            Stream::ProcessNoise => 0x7072_6f63_6573,
            Stream::OutputNoise => 0x6f75_7470_7574,
            Stream::InputNoise => 0x696e_7075_7400,
            Stream::Excitation => 0x6578_6369_7465,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    pub const fn new(value: u64) -> Self {
        Seed(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Derives an independent child seed.
    pub fn child(self, tag: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(tag).rotate_left(17)))
    }

    pub fn stream(self, stream: Stream) -> Seed {
        self.child(stream.tag())
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(value: u64) -> Self {
        Seed(value)
    }
}
