//! Seed derivation. Every rollout seed is a pure function of the master
//! seed and the rollout's position, independent of scheduling.

/// One round of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a labelled stream derived from `master`.
pub fn derive(master: u64, stream: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master ^ splitmix64(stream)) ^ a) ^ b)
}

pub const STREAM_ROLLOUT: u64 = 1;
pub const STREAM_META: u64 = 2;
pub const STREAM_BEST: u64 = 3;

/// Inner-training seed of rollout `index` in outer step `step`.
pub fn rollout_seed(master: u64, step: usize, index: usize) -> u64 {
    derive(master, STREAM_ROLLOUT, step as u64, index as u64)
}

/// Seed of the meta sampler at outer step `step`.
pub fn meta_seed(master: u64, step: usize) -> u64 {
    derive(master, STREAM_META, step as u64, 0)
}
