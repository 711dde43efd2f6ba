//! Deterministic seed derivation.
//!
//! Every randomized component draws from its own ChaCha stream derived from a
//! root seed plus a label path. Streams never interleave, so toggling one
//! component (e.g. the prefix gate) cannot perturb another's draws — replay
//! equivalence tests depend on this.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes, folded into the root seed.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ root.wrapping_mul(0x9e3779b97f4a7c15);
    for label in labels {
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub fn derive_rng(root: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, labels))
}

/// Standard normal sample via Box-Muller. Self-contained so the sampling
/// algorithm can never drift underneath frozen golden values.
pub fn sample_standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = rng.random::<f64>();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        return r * (2.0 * std::f64::consts::PI * u2).cos();
    }
}
