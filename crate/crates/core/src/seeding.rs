//! Deterministic seed derivation for parallel experiments.
//!
//! A master seed is stirred with the grid cell index and the trial index
//! through the splitmix64 finalizer, giving every trial its own independent
//! stream. The rule is fixed here so that results are reproducible across
//! thread counts, platforms, and reimplementations:
//!
//! ```text
//! s1 = splitmix64(master  ^ (grid_index  + 1) * 0x9E3779B97F4A7C15)
//! s2 = splitmix64(s1      ^ (trial_index + 1) * 0xBF58476D1CE4E5B9)
//! ```

/// The splitmix64 finalizer: a bijective 64-bit mix with good avalanche.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial within one grid cell of an experiment.
pub fn trial_seed(master: u64, grid_index: u64, trial_index: u64) -> u64 {
    let s1 = splitmix64(
        master
            ^ grid_index
                .wrapping_add(1)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    splitmix64(
        s1 ^ trial_index
            .wrapping_add(1)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9),
    )
}

/// Derive a labeled sub-seed from a trial seed, for the independent draws
/// inside one trial (source sample, target sample, inner Monte Carlo, ...).
pub fn sub_seed(seed: u64, label: u64) -> u64 {
    splitmix64(seed ^ label.wrapping_add(1).wrapping_mul(0x94D0_49BB_1331_11EB))
}
