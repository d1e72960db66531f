//! Seeded RNG substreams. Every random decision in a run draws from a
//! stream keyed by (master seed, scope label, entity ids), so modules never
//! share generator state: adding draws in one place cannot shift the
//! sequence seen anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy)]
pub struct RngFactory {
    master: u64,
}

impl RngFactory {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Fresh generator for (scope, a, b). The same key always yields the
    /// same stream; distinct keys are independent.
    pub fn stream(&self, scope: &str, a: u64, b: u64) -> ChaCha12Rng {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update([scope.len() as u8]);
        h.update(scope.as_bytes());
        h.update(a.to_le_bytes());
        h.update(b.to_le_bytes());
        let seed: [u8; 32] = h.finalize().into();
        ChaCha12Rng::from_seed(seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_key_same_stream() {
        let f = RngFactory::new(42);
        let a: Vec<u64> = f.stream("select", 1, 2).sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u64> = f.stream("select", 1, 2).sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_keys_diverge() {
        let f = RngFactory::new(42);
        let base = f.stream("select", 1, 2).gen::<u64>();
        assert_ne!(base, f.stream("select", 1, 3).gen::<u64>());
        assert_ne!(base, f.stream("select", 2, 2).gen::<u64>());
        assert_ne!(base, f.stream("train", 1, 2).gen::<u64>());
        assert_ne!(base, RngFactory::new(43).stream("select", 1, 2).gen::<u64>());
    }

    #[test]
    fn scope_labels_do_not_alias() {
        // ("ab", then 1) and ("a", then b-ish ids) must not collide; the
        // length prefix keeps label boundaries unambiguous.
        let f = RngFactory::new(7);
        let x = f.stream("ab", 0, 0).gen::<u64>();
        let y = f.stream("a", 0, 0).gen::<u64>();
        assert_ne!(x, y);
    }
}
