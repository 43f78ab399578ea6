//! Small internal helpers shared across modules.

/// FNV-1a 64-bit hash; used for RNG stream derivation and content digests
/// where cryptographic strength is not needed.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
