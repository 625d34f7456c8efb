//! Seed derivation so independent RNG streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream `salt` derived from a master seed; distinct salts give
/// independent, reproducible streams.
pub fn derive_rng(master: u64, salt: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(splitmix64(master ^ splitmix64(salt)))
}
