//! Seed derivation helpers.

/// One step of the SplitMix64 output function.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `parts` into a seed rooted at `base`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, &p| splitmix64(acc ^ p))
}

/// Training seed of the `index`-th job of a run. Consecutive jobs get
/// consecutive seeds, so any `n` consecutive jobs cover every residue mod `n`.
pub fn job_seed(run_seed: u64, index: u64) -> u64 {
    splitmix64(run_seed).wrapping_add(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_seeds_are_consecutive() {
        let a = job_seed(7, 0);
        assert_eq!(job_seed(7, 2), a.wrapping_add(2));
        assert_ne!(job_seed(7, 0), job_seed(8, 0));
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
    }
}
