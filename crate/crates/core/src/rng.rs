//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha8 stream whose seed is derived
//! from `(root seed, purpose tag, ids...)`. The derivation is a SplitMix64
//! chain over the FNV-1a hash of the tag, so it is stable across platforms
//! and independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the pipeline.
pub type Rng = ChaCha8Rng;

/// Recorded in run metadata so results can be attributed to a generator.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.3) seeded via splitmix64(root, fnv1a(tag), ids)";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(root: u64, tag: &str, ids: &[u64]) -> u64 {
    let mut s = splitmix64(root ^ fnv1a(tag.as_bytes()));
    for &id in ids {
        s = splitmix64(s ^ id);
    }
    s
}

pub fn stream(root: u64, tag: &str, ids: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tag, ids))
}

/// Stable 64-bit id for string identifiers such as segment ids.
pub fn id_hash(id: &str) -> u64 {
    fnv1a(id.as_bytes())
}
