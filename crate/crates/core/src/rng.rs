//! Seed derivation and the random draws used by masking and sampling.
//!
//! Every stochastic operation builds its own generator from a 64-bit seed:
//! `Xoshiro256PlusPlus::seed_from_u64`, which expands the seed with
//! splitmix64. Derived seeds come from [`mix`], so results never depend on
//! the order in which parallel work is scheduled.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One splitmix64 output step applied to `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of the `index`-th child stream of `base`.
pub fn mix(base: u64, index: u64) -> u64 {
    splitmix64(base ^ index.wrapping_mul(GOLDEN_GAMMA))
}

pub fn stream(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Uniform draw in `[0, 1)`.
pub(crate) fn unit(rng: &mut StreamRng) -> f64 {
    rng.gen::<f64>()
}

/// Index drawn proportionally to `weights` (all finite, non-negative, not all
/// zero). Consumes exactly one uniform draw.
pub(crate) fn weighted_index(rng: &mut StreamRng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = unit(rng) * total;
    for (i, &w) in weights.iter().enumerate() {
        if target < w {
            return i;
        }
        target -= w;
    }
    // rounding left `target` marginally above the last bucket
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Index of the largest weight; ties go to the lowest index.
pub(crate) fn argmax(weights: &[f64]) -> usize {
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference splitmix64 generator seeded with 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn mix_separates_indices() {
        let seeds: Vec<u64> = (0..64).map(|i| mix(7, i)).collect();
        let mut dedup = seeds.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seeds.len());
        assert_eq!(mix(7, 3), mix(7, 3));
    }

    #[test]
    fn weighted_index_respects_zero_weights() {
        let mut rng = stream(1);
        for _ in 0..200 {
            let i = weighted_index(&mut rng, &[0.0, 2.0, 0.0, 1.0]);
            assert!(i == 1 || i == 3);
        }
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
