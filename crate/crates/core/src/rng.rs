//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness draws from its own ChaCha stream selected by
//! (purpose, index), so adding draws to one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Slot-to-client assignment a(i, t).
    Assignment = 1,
    /// Per-client sample selection ξ.
    Sampling = 2,
    /// Per-client Gaussian privacy noise.
    Noise = 3,
    /// Network latency draws.
    Latency = 4,
    /// Dataset shuffling, splitting and partitioning.
    Data = 5,
}

/// The stream for `(purpose, index)` under `master`.
pub fn stream(master: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((purpose as u64) << 32) | (index & 0xffff_ffff));
    rng
}
