//! Deterministic seed derivation so that independent random streams (per
//! trial, per iteration, per purpose) never depend on execution order.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix(base.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(mix(stream)))
}

/// Seed for a path of sub-streams, e.g. `[trial, iteration, purpose]`.
pub fn derive_seed_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |acc, &s| derive_seed(acc, s))
}
