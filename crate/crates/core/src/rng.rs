//! Seeded randomness. One generator family is used project-wide so sensing
//! matrices, initializations and masks reproduce bit-for-bit from a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

/// Counter-based stream cipher RNG (ChaCha8) behind a 64-bit seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child generator with a seed derived from this one's seed and a label.
    /// Used to fan a single run seed out to independent sub-streams.
    pub fn derive(&self, label: &str) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, label))
    }

    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn next_uniform_open(&mut self) -> f64 {
        loop {
            let u = self.next_uniform();
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform index in 0..n.
    #[inline]
    pub fn gen_index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_gaussian();
        }
    }

    /// n i.i.d. standard normal draws; n must be at least 1.
    pub fn gaussian_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::InvalidArg("gaussian_vec requires n >= 1".into()));
        }
        let mut out = vec![0.0; n];
        self.fill_gaussian(&mut out);
        Ok(out)
    }
}

/// Fixed seed derivation: FNV-1a over the parent seed bytes and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + label.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(label.as_bytes());
    fnv1a64(&bytes)
}
