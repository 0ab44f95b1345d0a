//! Counter-based seed derivation.
//!
//! A run is driven by one master seed. Every consumer of randomness derives
//! its own [`SeedStream`] by mixing a purpose tag and counters into the
//! parent value, so batches drawn in any order (or on any thread) are
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose tags used when splitting streams.
pub mod purpose {
    pub const EXPLORATION: u64 = 0x6578_706c;
    pub const EXPLOITATION: u64 = 0x6578_7074;
    pub const BASELINE: u64 = 0x6563_6466;
    pub const ORACLE: u64 = 0x6f72_636c;
    pub const POOL: u64 = 0x706f_6f6c;
    pub const TRIAL: u64 = 0x7472_6961;
    pub const BUDGET: u64 = 0x6275_6467;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedStream(pub u64);

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(seed)
    }

    /// Independent child stream for `(tag, index)`.
    pub fn derive(self, tag: u64, index: u64) -> SeedStream {
        let a = splitmix64(self.0 ^ splitmix64(tag));
        SeedStream(splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
