//! Seeded random streams.
//!
//! All randomness in the crate flows through [`SeededRng`], a ChaCha8 stream
//! whose output is fixed by its seed across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent stream keyed by `(seed, label)`.
///
/// Two labels never share a stream position, so consumers that draw from
/// their own derived stream are unaffected by the order other consumers run in.
pub fn derived(seed: u64, label: &str) -> SeededRng {
    let mut h = fnv1a64(label.as_bytes(), seed);
    // splitmix64 finalizer so nearby seeds map to unrelated keys
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    ChaCha8Rng::seed_from_u64(h)
}

/// FNV-1a over `bytes` with the offset basis perturbed by `seed`.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
