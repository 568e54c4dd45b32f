//! Named, counter-based random streams.
//!
//! Every random draw in a run comes from a stream identified by
//! `(master seed, stream name, index)`. Streams are ChaCha keyed by the
//! master seed and the name, with the index selecting the ChaCha stream, so
//! proposal `i` sees the same noise regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const DATA_NOISE: &str = "data-noise";
pub const TRUTH: &str = "truth";
pub const DESIGN: &str = "design";
pub const INIT: &str = "init";
pub const PROPOSALS: &str = "proposals";
pub const MH_UNIFORMS: &str = "mh-uniforms";
pub const HOLDOUT: &str = "holdout";

/// FNV-1a, used only to turn a stream name into key material.
fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Returns the RNG for `(master, name, index)`.
pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Fills a vector with i.i.d. standard normal draws.
pub fn standard_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}
