//! Labeled seed derivation. Every random stream in a run hangs off one root
//! seed; a component asks for its own stream by name, so adding a component
//! never shifts another one's draws.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

/// Generator used for every random draw in the crate (xoshiro256++).
pub type Rng = Xoshiro256PlusPlus;

/// Identifies the generator family recorded in artifact headers.
pub const RNG_NAME: &str = "xoshiro256++/sha256-derive-v1";

pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, label: &str) -> Rng {
    rng(derive_seed(root, label))
}
