//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids reserved by the simulator. Node channels use their node id.
pub mod stream {
    pub const MULTIPATH: u64 = 16;
    pub const LOSS: u64 = 17;
    pub const TRUTH: u64 = 18;
    pub const TRAJECTORY: u64 = 19;
    pub const INIT: u64 = 20;
    pub const BATCHES: u64 = 21;
    pub const DROPOUT: u64 = 22;
}

/// SplitMix64 finalizer, used to combine seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 generator on `stream` of the key derived from `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
