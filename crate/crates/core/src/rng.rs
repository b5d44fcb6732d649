//! Seeded randomness.
//!
//! Every randomized subroutine draws from its own ChaCha stream, keyed by the
//! run seed and a subroutine name. Replaying a run with the same seed therefore
//! reproduces every draw, independent of scheduling order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// The generator type used throughout the crate.
pub type DpRng = ChaCha8Rng;

/// Derives the stream for `name` under `seed`.
pub fn stream(seed: u64, name: &str) -> DpRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(key)
}

/// A run seed plus a name prefix; hands out named child streams.
#[derive(Debug, Clone)]
pub struct Streams {
    seed: u64,
    prefix: String,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            prefix: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A child namespace, e.g. one per class.
    pub fn scope(&self, name: &str) -> Streams {
        Streams {
            seed: self.seed,
            prefix: self.qualify(name),
        }
    }

    pub fn rng(&self, name: &str) -> DpRng {
        stream(self.seed, &self.qualify(name))
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.prefix, name)
        }
    }
}
