//! Seeded random streams.
//!
//! Every sampler in the crate draws from [`ChaCha20Rng`], a counter-based
//! generator whose output is fixed by its 256-bit key and 64-bit stream id.
//! The key is derived from a [`RngSeed`] with `SeedableRng::seed_from_u64`,
//! so identical seeds and call sequences give bit-identical draws on every
//! platform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Generator for stream 0.
    pub fn rng(self) -> ChaCha20Rng {
        self.stream(0)
    }

    /// Independent generator for the given stream id. Parallel tasks sharing
    /// a seed should each take their own stream.
    pub fn stream(self, id: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(id);
        rng
    }

    /// A child seed for the task labelled `label`.
    pub fn derive(self, label: u64) -> RngSeed {
        RngSeed(self.stream(label).next_u64())
    }
}

impl From<u64> for RngSeed {
    fn from(seed: u64) -> Self {
        RngSeed(seed)
    }
}
