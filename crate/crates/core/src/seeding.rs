//! Deterministic seed derivation.
//!
//! Every random draw in the crate flows from an explicit 64-bit seed through
//! these mixers, so reruns are bit-identical and parallel schedules cannot
//! change results. The hashes are fixed here rather than taken from the
//! standard library so the mapping never changes across toolchains.

/// SplitMix64 finalizer; a single full-avalanche mixing step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a salt (ensemble index, class
/// code, subject index, ...).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Derive a child seed from a base seed and two salts.
pub fn derive_seed2(base: u64, salt_a: u64, salt_b: u64) -> u64 {
    derive_seed(derive_seed(base, salt_a), salt_b)
}

/// FNV-1a over a byte string; used to fold subject ids into seed material.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
