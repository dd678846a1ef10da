//! Stable seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`
//! produced here, so results do not depend on thread scheduling or on the
//! platform's default generator. A child seed is
//! `splitmix64(parent ^ splitmix64(stream + GOLDEN))`, which is cheap,
//! portable and documented well enough to be reimplemented elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `stream` from `parent`.
pub fn derive(parent: u64, stream: u64) -> u64 {
    splitmix64(parent ^ splitmix64(stream.wrapping_add(GOLDEN)))
}

/// Derive along a path of stream indices, e.g. `(master, [replicate, attempt])`.
pub fn derive_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |s, &k| derive(s, k))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags, kept distinct so that e.g. tuning folds never coincide with
// evaluation folds for the same user seed.
pub const STREAM_TUNE: u64 = 0x7475_6e65;
pub const STREAM_EVAL: u64 = 0x6576_616c;
pub const STREAM_BOOT: u64 = 0x626f_6f74;
pub const STREAM_TREE: u64 = 0x7472_6565;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable() {
        // Frozen values; a change here breaks reproducibility of saved runs.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive(7, 1), derive(7, 1));
        assert_ne!(derive(7, 1), derive(7, 2));
        assert_ne!(derive(7, 1), derive(8, 1));
        assert_eq!(derive_path(7, &[1, 2]), derive(derive(7, 1), 2));
    }
}
