//! Seed derivation for reproducible, stream-splittable randomness.
//!
//! Every consumer (dataset samples, splits, model init, epoch shuffling)
//! draws from a PCG32 generator seeded through [`derive_seed`], so any
//! sample or run can be regenerated in isolation without replaying the
//! whole stream.

use rand_pcg::Pcg32;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// splitmix64 finalizer over `base + index * GAMMA`.
///
/// Mixes a run seed and a stream index into a statistically independent
/// 64-bit seed. Bijective in `base` for fixed `index` and vice versa.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(GAMMA)).wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// PCG32 stream for a derived seed.
pub fn pcg(seed: u64) -> Pcg32 {
    use rand::SeedableRng;
    Pcg32::seed_from_u64(seed)
}

/// Per-sample generator: `pcg(derive_seed(stream_seed, index))`.
pub fn sample_rng(stream_seed: u64, index: u64) -> Pcg32 {
    pcg(derive_seed(stream_seed, index))
}
