//! Sources of uniform random bytes.
//!
//! Protocol code never touches a thread RNG. Everything that needs
//! randomness takes a [`RandomSource`], which in the simulator is backed
//! by a key supply agent's finite buffer and in tests by a seeded stream.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub trait RandomSource {
    /// Fill `dest` with uniform bytes or fail without partial consumption.
    fn fill(&mut self, dest: &mut [u8]) -> Result<()>;

    fn next_bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut out = vec![0u8; n];
        self.fill(&mut out)?;
        Ok(out)
    }
}

impl<T: RandomSource + ?Sized> RandomSource for &mut T {
    fn fill(&mut self, dest: &mut [u8]) -> Result<()> {
        (**self).fill(dest)
    }
}

/// Unbounded deterministic stream, ChaCha20 keyed by a 64-bit seed.
#[derive(Clone, Debug)]
pub struct SeededRandom(ChaCha20Rng);

impl SeededRandom {
    pub fn new(seed: u64) -> Self {
        SeededRandom(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Derive an independent stream by mixing a label into the seed.
    pub fn derive(seed: u64, label: &str) -> Self {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(seed.to_be_bytes());
        h.update(label.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        SeededRandom(ChaCha20Rng::from_seed(digest))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}

impl RandomSource for SeededRandom {
    fn fill(&mut self, dest: &mut [u8]) -> Result<()> {
        self.0.fill_bytes(dest);
        Ok(())
    }
}

/// A finite pool of random bytes. Used where exhaustion must be observable.
#[derive(Clone, Debug, Default)]
pub struct FiniteRandom {
    pool: Vec<u8>,
    pos: usize,
}

impl FiniteRandom {
    pub fn new(pool: Vec<u8>) -> Self {
        FiniteRandom { pool, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.pool.len() - self.pos
    }
}

impl RandomSource for FiniteRandom {
    fn fill(&mut self, dest: &mut [u8]) -> Result<()> {
        if dest.len() > self.remaining() {
            return Err(Error::KeySupply {
                requested: dest.len() as u64 * 8,
                available: self.remaining() as u64 * 8,
            });
        }
        dest.copy_from_slice(&self.pool[self.pos..self.pos + dest.len()]);
        self.pos += dest.len();
        Ok(())
    }
}
