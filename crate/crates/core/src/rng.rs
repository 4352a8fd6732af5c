//! Seed derivation.
//!
//! Every random draw in the pipeline comes from a ChaCha8 stream whose seed is
//! `mix(root, domain, ordinal)`. A stream is therefore addressed by what it is
//! used for (the domain tag) and which instance it is (walk number, iteration,
//! shape index), never by the order in which work happens to be scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. The numeric values are part of the reproducibility
/// contract; do not renumber.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Batch = 2,
    TrainWalk = 3,
    EvalShape = 4,
    Walk = 5,
    WalkStep = 6,
    Synth = 7,
    Gradcheck = 8,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed. Collisions are as unlikely as for any 64-bit hash.
pub fn derive_seed(root: u64, domain: Domain, ordinal: u64) -> u64 {
    let a = splitmix64(root ^ splitmix64(domain as u64));
    splitmix64(a ^ splitmix64(ordinal.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn stream(root: u64, domain: Domain, ordinal: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, domain, ordinal))
}
