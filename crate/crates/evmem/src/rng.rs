//! Seeded random streams. Every random draw in the crate flows from one
//! master seed through a named sub-stream, so components can be
//! reproduced independently (re-running the perturbation does not depend
//! on how many draws training consumed).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hashing::{fnv1a64, splitmix64};

/// Deterministic RNG for the sub-stream `label` of `seed`.
pub fn sub_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(label.as_bytes(), 0)))
}
