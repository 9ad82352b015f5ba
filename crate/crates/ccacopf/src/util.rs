//! Small shared helpers: content fingerprints and deterministic RNG streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of arbitrary bytes, used to fingerprint cases,
/// datasets and models so downstream artifacts can assert provenance.
pub fn fingerprint(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Deterministic per-item RNG stream.
///
/// Streams are keyed by `(seed, domain, index)` so that work items can be
/// evaluated in any order (or in parallel) and still reproduce bit-identical
/// draws. `domain` separates uses (training draws, scenario draws, probes…)
/// that share a user-facing seed.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// RNG stream domains; fixed constants so file formats stay reproducible.
pub mod domains {
    pub const TRAINING: u64 = 1;
    pub const SCENARIOS: u64 = 2;
    pub const PROBES: u64 = 3;
    pub const SPLIT: u64 = 4;
}
