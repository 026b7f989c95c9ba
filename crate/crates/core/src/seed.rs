//! Seed derivation.
//!
//! Every random stream in a run is derived from the master seed and a short
//! tuple of integer keys, so no global mutable generator exists and results do
//! not depend on how work is split across threads.
//!
//! The derivation is
//!
//! ```text
//! h0 = mix64(master)
//! h_{k+1} = mix64(h_k XOR key_k)
//! seed = h_n
//! ```
//!
//! where `mix64` is the SplitMix64 step: add `0x9E3779B97F4A7C15`, then the
//! two xor-shift-multiply rounds with constants `0xBF58476D1CE4E5B9` and
//! `0x94D049BB133111EB` and a final `x ^ (x >> 31)`. All arithmetic wraps.
//! Derived seeds feed [`ChaCha8Rng::seed_from_u64`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. The first key of every derived stream names its purpose.
pub mod tag {
    pub const LATTICE_INIT: u64 = 1;
    pub const POLICY_INIT: u64 = 2;
    pub const CANDIDATES: u64 = 3;
    pub const COMMIT: u64 = 4;
    pub const Q_ACTION: u64 = 5;
    pub const FERMI: u64 = 6;
    pub const SWEEP_CHILD: u64 = 7;
    pub const REPLICATE: u64 = 8;
}

pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix64(master), |h, &k| mix64(h ^ k))
}

/// A generator keyed by `(master, keys...)`.
pub fn stream(master: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, keys))
}
