//! Explicit seed derivation. Every random draw in training and masking comes
//! from a generator built here from a base seed and a few integer coordinates
//! (epoch, step, instance), so runs are reproducible and resumable without
//! saving generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with coordinates into a new seed.
pub fn derive(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for the given base seed and coordinates.
pub fn rng(base: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, coords))
}

/// Stream tags so different consumers of the same coordinates never share a
/// generator.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const MASKING: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const TOYGEN: u64 = 6;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_coordinate_sensitive() {
        assert_eq!(derive(7, &[1, 2]), derive(7, &[1, 2]));
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(8, &[1]));
    }
}
