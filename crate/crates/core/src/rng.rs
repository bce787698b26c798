//! Seeded random-number provisioning.
//!
//! Every source of randomness in a run is a named stream derived from the
//! master seed. Identical `(seed, label)` pairs yield identical sequences
//! on every platform, and distinct labels yield independent streams, so a
//! run is reproducible no matter which subsystems consume randomness in
//! which order.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Derives an independent, reproducible random stream for `(master_seed,
/// stream_label)`. The stream seed is the SHA-256 digest of the pair, so
/// streams are statistically independent and stable across platforms.
pub fn seeded_rng(master_seed: u64, stream_label: &str) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(stream_label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}
