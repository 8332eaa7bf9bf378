//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a value
//! derived here, so that results never depend on the order in which work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of integers into a new seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(GOLDEN))))
}

/// Seed for the actual-duration draw of `job_id` on `machine`.
///
/// Depends only on the triple, so two schedulers that assign the same job
/// to the same machine see the same realized duration.
pub fn duration_seed(master: u64, job_id: u64, machine: u64) -> u64 {
    derive_seed(master, &[0xD0_u64, job_id, machine])
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
