//! Seed derivation and the fixed-algorithm generator used for every random draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The portable generator behind every seeded stream.
pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a base seed with a path of integers into a new seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Independent streams per purpose, so that e.g. a controller's draws never shift
/// the environment's draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Outcomes = 1,
    Estimates = 2,
    Controller = 3,
    Generator = 4,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[which as u64]))
}
