//! Purpose-keyed random streams.
//!
//! Every stochastic consumer (weight init, shuffling, random pruning, data
//! synthesis, validation carving) draws from its own ChaCha stream selected by
//! `(seed, purpose, index)`. Streams never share state, so runs can execute in
//! any order or concurrently and still produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used throughout the crate.
pub mod purpose {
    pub const INIT: &str = "init";
    pub const SHUFFLE: &str = "shuffle";
    pub const RANDOM_PRUNE: &str = "rp";
    pub const SYNTH: &str = "synth";
    pub const SPLIT: &str = "split";
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(splitmix(fnv1a(purpose.as_bytes()) ^ splitmix(index)));
    rng
}
