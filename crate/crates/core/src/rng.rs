//! Deterministic random streams.
//!
//! Every stream is keyed by 32 bytes. Child streams are derived by hashing the
//! parent key with a label, so a child never depends on how far the parent has
//! been advanced. Monte Carlo repetitions use this to get independent,
//! reproducible streams regardless of scheduling order or worker count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct Stream {
    key: [u8; 32],
    rng: ChaCha20Rng,
}

fn hash_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        // Length prefix keeps ("ab","c") and ("a","bc") apart.
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

impl Stream {
    pub fn from_key(key: [u8; 32]) -> Self {
        Self {
            key,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::from_key(hash_parts(&[b"cvpower/seed", &seed.to_le_bytes()]))
    }

    /// Stream for one Monte Carlo repetition of one scenario.
    pub fn for_repetition(master_seed: u64, scenario: &[u8; 32], repetition: u64) -> Self {
        Self::from_key(hash_parts(&[
            b"cvpower/repetition",
            &master_seed.to_le_bytes(),
            scenario,
            &repetition.to_le_bytes(),
        ]))
    }

    /// Child stream identified by `label`; does not advance `self`.
    pub fn derive(&self, label: u64) -> Self {
        Self::from_key(hash_parts(&[
            b"cvpower/derive",
            &self.key,
            &label.to_le_bytes(),
        ]))
    }

    pub fn key(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SHA-256 of a canonical description; used to key scenarios.
pub fn digest(text: &str) -> [u8; 32] {
    hash_parts(&[b"cvpower/scenario", text.as_bytes()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Stream::from_seed(7);
        let mut b = Stream::from_seed(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_ignores_parent_position() {
        let a = Stream::from_seed(1);
        let mut b = Stream::from_seed(1);
        b.next_u64();
        assert_eq!(a.derive(3).key(), b.derive(3).key());
        assert_ne!(a.derive(3).key(), a.derive(4).key());
    }

    #[test]
    fn repetition_streams_differ() {
        let s = digest("x");
        let a = Stream::for_repetition(1, &s, 0);
        let b = Stream::for_repetition(1, &s, 1);
        let c = Stream::for_repetition(2, &s, 0);
        assert_ne!(a.key(), b.key());
        assert_ne!(a.key(), c.key());
    }
}
