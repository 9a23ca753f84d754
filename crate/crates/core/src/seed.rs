//! Seed derivation for independent random streams.
//!
//! Every stochastic component (shuffling, dropout noise, triplet sampling,
//! paraphrasing) draws from its own stream so that enabling one component
//! never shifts the random sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a over a byte slice, continuing from `state`.
pub fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed, a stream tag and an index.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, tag.as_bytes());
    splitmix64(base ^ splitmix64(h ^ splitmix64(index)))
}

pub fn rng(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag, index))
}
