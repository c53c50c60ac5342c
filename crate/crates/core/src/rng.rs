//! Randomness plumbing. Every random draw in the crate goes through
//! [`FepRng`] so tests and Monte Carlo runs can be replayed from a seed.

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// A cryptographically secure RNG usable as a trait object.
pub trait FepRng: RngCore + CryptoRng {}

impl<T: RngCore + CryptoRng + ?Sized> FepRng for T {}

pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent stream `index` under a master seed. Trial RNGs are split this
/// way so results do not depend on how trials are scheduled onto threads.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Production entropy source.
pub fn os_rng() -> rand::rngs::OsRng {
    rand::rngs::OsRng
}

pub fn random_bytes(rng: &mut dyn FepRng, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}
