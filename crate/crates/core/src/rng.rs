//! Deterministic RNG derivation.
//!
//! All randomness in the toolkit flows from one root seed. Components derive
//! independent substreams from `(seed, label, index)` so that parallel
//! evaluation (one substream per trial) and resumable training (one substream
//! per epoch/step) stay reproducible regardless of thread count.

use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; enough mixing to decorrelate labeled substreams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn label_hash(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Substream for `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mixed = mix(mix(seed ^ label_hash(label)) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Substream for `(seed, label)` with index 0.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    substream(seed, label, 0)
}
