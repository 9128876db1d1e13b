//! Stable seed derivation.
//!
//! Grid cells, fold plans and permutation streams all need seeds that are
//! reproducible across runs, platforms and compiler versions, so this uses a
//! fixed splitmix64 mix rather than `std`'s unstable hasher.

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a sequence of words into one seed; order-sensitive.
pub fn mix(words: &[u64]) -> u64 {
    let mut h = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &w in words {
        h = splitmix64(h ^ w);
    }
    h
}

/// Seed for one grid cell, derived from the master seed and the cell key.
pub fn cell_seed(master_seed: u64, snr: f64, n_signal_channels: usize) -> u64 {
    mix(&[master_seed, snr.to_bits(), n_signal_channels as u64])
}

/// Independent sub-stream of a seed (injection, folds, permutations, ...).
pub fn substream(seed: u64, stream: u64) -> u64 {
    mix(&[seed, stream])
}
