//! Seed derivation. Every source of randomness in a run is a ChaCha8 stream
//! whose seed is derived from the single global seed, so adding a stage never
//! perturbs the streams of earlier stages.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step; the standard 64-bit finalizer.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string, used to fold stage names into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derive a child seed from a parent seed and a label.
///
/// The derivation is part of the on-disk reproducibility contract:
/// `derive_seed(global, "sl")` names the supervised stage stream, etc.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ fnv1a(label.as_bytes()))
}

/// Derive a child seed from a parent and a sequence of integer coordinates
/// (epoch, step, sample slot, ...).
pub fn derive_seed_n(parent: u64, coords: &[u64]) -> u64 {
    let mut s = splitmix64(parent);
    for &c in coords {
        s = splitmix64(s ^ c);
    }
    s
}

/// The crate-standard seeded RNG.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
