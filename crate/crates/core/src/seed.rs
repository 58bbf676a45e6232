//! Stable seed derivation. Values produced here end up in persisted
//! artifacts, so the mixing function must never change.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `parent`, e.g. a per-segment seed under the
/// job seed.
pub fn derive(parent: u64, index: u64) -> u64 {
    mix64(parent ^ mix64(index))
}

/// Seed for a named stream under `parent` (e.g. "closure", "attempt-2").
pub fn derive_named(parent: u64, name: &str) -> u64 {
    // FNV-1a
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    });
    derive(parent, h)
}
