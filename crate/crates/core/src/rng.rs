//! Seed splitting.
//!
//! Every random stream in a run comes from one 64-bit master seed. A stream is a
//! ChaCha8 generator keyed by the master seed and selected by a 64-bit stream id
//! `(purpose << 32) | index`, so streams never overlap and adding a chain or a
//! replication never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Geography = 1,
    Survey = 2,
    Chain = 3,
    Calibration = 4,
    Responses = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << 32, "stream index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | index);
    rng
}

/// Seed for a nested run (one calibration replication, say), derived from its stream.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, purpose, index).next_u64()
}
