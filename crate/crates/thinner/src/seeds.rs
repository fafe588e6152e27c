//! Deterministic seed fan-out.
//!
//! Every command takes one master seed. Each consumer of randomness (data
//! generation, the train/validation split, weight init, shuffling, per-round
//! fine-tuning) gets its own stream derived with [`subseed`], so adding or
//! removing one consumer never shifts the randomness seen by the others.

/// Domain tag for synthetic data generation.
pub const DOMAIN_DATA: u64 = 1;
/// Domain tag for the train/validation split.
pub const DOMAIN_SPLIT: u64 = 2;
/// Domain tag for weight initialisation.
pub const DOMAIN_INIT: u64 = 3;
/// Domain tag for training (epoch shuffles).
pub const DOMAIN_TRAIN: u64 = 4;
/// Domain tag for the pruning loop (per-round fine-tune seeds derive from it).
pub const DOMAIN_PRUNE: u64 = 5;

/// Derives an independent seed for `domain` from `master`.
///
/// Uses a SplitMix64 finalizer over `master` xor a spread-out copy of the
/// domain tag. Distinct `(master, domain)` pairs give unrelated outputs, and
/// the result is stable across platforms (pure integer arithmetic).
pub fn subseed(master: u64, domain: u64) -> u64 {
    let mut z = master ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
