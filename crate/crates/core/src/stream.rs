//! Counter-based random streams.
//!
//! Every random draw is taken from a ChaCha stream keyed by
//! `(seed, phase, iteration, item)`, so a computation yields the same values
//! whether items are processed serially or in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GLOBAL_ITEM: u64 = u32::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    pub seed: u64,
    pub iteration: u64,
}

impl Streams {
    pub fn new(seed: u64, iteration: u64) -> Self {
        Self { seed, iteration }
    }

    /// Stream for one item (document, trip, topic) of a phase.
    pub fn item(&self, phase: u8, item: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(self.iteration)));
        rng.set_stream(((phase as u64) << 56) | (item & 0x00ff_ffff_ffff_ffff));
        rng
    }

    /// Stream for a serial (global) step of a phase.
    pub fn global(&self, phase: u8) -> ChaCha8Rng {
        self.item(phase, GLOBAL_ITEM)
    }
}

/// Seeded generator for one-shot use outside iterative samplers.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
