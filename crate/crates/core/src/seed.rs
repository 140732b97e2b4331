//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a SHA-256
//! digest of a path such as `(seed, "profile", 17, "items")`. Streams for
//! different paths are independent, so results never depend on evaluation
//! order or thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SeedStream {
    digest: [u8; 32],
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"lcprobe/seed/v1");
        h.update(seed.to_le_bytes());
        Self { digest: h.finalize().into() }
    }

    /// Derives a named sub-stream.
    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.digest);
        h.update([0x01]);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        Self { digest: h.finalize().into() }
    }

    /// Derives the `i`-th indexed sub-stream.
    pub fn index(&self, i: u64) -> Self {
        let mut h = Sha256::new();
        h.update(self.digest);
        h.update([0x02]);
        h.update(i.to_le_bytes());
        Self { digest: h.finalize().into() }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest)
    }

    /// Collapses the stream into a plain integer seed, e.g. for passing to an
    /// API that takes `u64`.
    pub fn as_u64(&self) -> u64 {
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.digest[..8]);
        u64::from_le_bytes(b)
    }
}
