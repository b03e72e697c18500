//! Reproducible random streams.
//!
//! A stream is identified by a master seed, a purpose tag and a replicate
//! index. Its key is the SHA-256 digest of that identity, and the words come
//! from a ChaCha keystream under that key, so a stream's output depends on
//! nothing but its identity. Monte-Carlo replicates can therefore run in any
//! order, on any number of threads, and still produce the same numbers.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

const DOMAIN: &[u8] = b"fedgen/rng-stream/v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngStream {
    key: [u8; 32],
}

impl RngStream {
    pub fn derive(seed: u64, purpose: &str, replicate: u64) -> Self {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(seed.to_le_bytes());
        h.update((purpose.len() as u64).to_le_bytes());
        h.update(purpose.as_bytes());
        h.update(replicate.to_le_bytes());
        RngStream { key: h.finalize().into() }
    }

    /// A sub-stream, independent of the parent and of every other child.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut h = Sha256::new();
        h.update(DOMAIN);
        h.update(b"/child");
        h.update(self.key);
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
        h.update(index.to_le_bytes());
        RngStream { key: h.finalize().into() }
    }

    /// A fresh generator positioned at the start of the stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key)
    }

    /// The first `count` words of the stream.
    pub fn words(&self, count: usize) -> Vec<u64> {
        let mut rng = self.rng();
        (0..count).map(|_| rng.next_u64()).collect()
    }
}

/// Shorthand for [`RngStream::derive`].
pub fn derive_stream(seed: u64, purpose: &str, replicate: u64) -> RngStream {
    RngStream::derive(seed, purpose, replicate)
}
