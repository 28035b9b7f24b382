//! Seed derivation helpers.
//!
//! Every stochastic component owns a [`ChaCha8Rng`] derived from the scenario
//! seed plus a purpose tag, so that consuming randomness in one subsystem
//! (say, action sampling) never shifts the draws of another (say, mobility).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG streams within one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Setup = 1,
    Mobility = 2,
    Traffic = 3,
    Policy = 4,
    Init = 5,
    Shuffle = 6,
    Synthetic = 7,
}

/// Derives a child seed from a parent seed and a list of indices
/// (e.g. iteration, episode). SplitMix64-style mixing; cheap and stable.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut s = base;
    for &p in path {
        s = mix(s ^ mix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    s
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded RNG for one purpose-tagged stream.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
