//! Seed derivation for reproducible sub-streams.
//!
//! Every randomized stage (parameter init, shuffling, crops, noise) draws
//! from a ChaCha stream seeded by `derive(base, stream)`, so runs are
//! bit-reproducible and checkpoint resumption needs no serialized RNG state:
//! stream indices are absolute (epoch number, step number, tensor index).

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for sub-stream `stream` of `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Two-level derivation (e.g. per-step then per-sample).
pub fn derive2(base: u64, a: u64, b: u64) -> u64 {
    derive(derive(base, a), b)
}
