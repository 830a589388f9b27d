//! Seeded stream RNGs.
//!
//! All randomness in the crate flows through [`stream_rng`]: one
//! counter-based generator keyed by `(seed, stream label)`. Distinct labels
//! give statistically independent streams, so kernel, reward, policy,
//! feature and trajectory draws stay independent and reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(label: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in label.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// RNG for the given `(seed, stream label)` pair.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label));
    rng
}
