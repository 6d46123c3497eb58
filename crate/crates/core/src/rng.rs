//! Counter-based random streams.
//!
//! Every trajectory draws from its own ChaCha stream keyed by `(seed, index)`,
//! so ensembles do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named sub-task (dual iteration, probe, ...).
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed) ^ mix64(tag.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Seed that depends on a state-time pair, so a stochastic policy is a pure
/// function of its arguments.
pub fn state_seed(seed: u64, x: &[f64], t: f64) -> u64 {
    let mut h = mix64(seed);
    for v in x.iter().chain(std::iter::once(&t)) {
        h = mix64(h ^ v.to_bits());
    }
    h
}

/// Random stream `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
