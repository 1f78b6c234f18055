//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`stream`]: a ChaCha20
//! generator keyed by a base seed, with the ChaCha stream id selecting an
//! independent substream. Repetition `r` of an experiment with seed `s`
//! always sees the same numbers regardless of which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Substream tags so the design, coefficients and noise of one repetition
/// never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Design = 1,
    Coefficients = 2,
    Noise = 3,
    Instance = 4,
}

pub fn stream(seed: u64, stream_id: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Stream for one (repetition, purpose) pair.
pub fn rep_stream(seed: u64, rep: u64, purpose: Purpose) -> Rng {
    stream(seed, (rep << 4) | purpose as u64)
}
