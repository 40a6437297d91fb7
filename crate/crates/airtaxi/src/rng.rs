//! Named deterministic RNG streams.
//!
//! Every random draw in the simulator comes from a stream derived from the
//! master seed and a purpose label, so toggling one subsystem (say, the
//! trajectory planner) never perturbs the draws consumed by another (say,
//! passenger arrivals). Streams are ChaCha8 generators keyed by a stable
//! FNV-1a hash of the label, expanded with splitmix64; output is identical
//! across platforms and runs.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive an independent stream from `(master_seed, label)`.
pub fn stream(master_seed: u64, label: &str) -> ChaCha8Rng {
    let mut state = master_seed ^ fnv1a(label.as_bytes());
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
