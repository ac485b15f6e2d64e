//! Seed fan-out: one top-level seed, named sub-seeds per randomized component.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable FNV-1a mix of the master seed and a component label. Hand-rolled so
/// the mapping never shifts under std hasher changes.
pub fn subseed(master: u64, label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ master;
    h = h.wrapping_mul(0x0000_0100_0000_01b3);
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn rng_for(master: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_fan_out() {
        assert_ne!(subseed(1, "split"), subseed(1, "negatives"));
        assert_ne!(subseed(1, "split"), subseed(2, "split"));
        assert_eq!(subseed(7, "init"), subseed(7, "init"));
    }
}
