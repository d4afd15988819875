//! Deterministic seed derivation.
//!
//! Every random stream in a simulation is derived from one master seed so
//! that a run is reproducible byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. A bijection on `u64`.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for replicate `index` of a master seed.
///
/// For a fixed master the map `index -> seed` is injective, so replicate
/// seeds are pairwise distinct.
pub fn derive(master: u64, index: u64) -> u64 {
    mix(master.wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Purpose tags separating the independent streams of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Mismatch noise `v_t` of the comparator path.
    PathNoise = 1,
    /// Stochastic gradient / observation noise, one sub-stream per agent.
    Oracle = 2,
    /// Synthetic loss construction.
    Losses = 3,
}

/// A ChaCha stream for `(seed, purpose, sub_stream)`.
pub fn stream(seed: u64, purpose: Stream, sub_stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, purpose as u64));
    rng.set_stream(sub_stream);
    rng
}
