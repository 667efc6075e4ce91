//! Deterministic seeding.
//!
//! All stochastic operations draw from a [`SimRng`] so that a (config, seed)
//! pair reproduces bit-identical results across runs and platforms. Child
//! streams are derived with a SplitMix64 finalizer rather than by splitting
//! the stream itself, which keeps trial seeds independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// The crate-wide RNG. ChaCha is portable and cheap to seed from a `u64`.
pub type SimRng = ChaCha12Rng;

/// SplitMix64 finalizer (Steele et al.), used as a seed mixer.
#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed by folding `components` into `master` one at a time.
pub fn child_seed(master: u64, components: &[u64]) -> u64 {
    let mut s = splitmix64(master);
    for &c in components {
        s = splitmix64(s ^ c);
    }
    s
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
