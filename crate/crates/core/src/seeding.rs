//! All randomness funnels through one global seed; each component draws from
//! a named substream so that changing e.g. the number of saliency masks never
//! perturbs the data split.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a over the component name.
fn component_tag(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// RNG for a named component under the global seed.
pub fn component_rng(global_seed: u64, component: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(component_tag(component));
    rng
}

/// RNG for an indexed unit of work (epoch, resample, mask) inside a
/// component. Streams are independent for distinct indices.
pub fn indexed_rng(global_seed: u64, component: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(component_tag(component) ^ index.wrapping_mul(0x9e3779b97f4a7c15));
    rng
}

/// A plain 64-bit seed for a named component, for APIs that take seeds
/// rather than RNGs.
pub fn derive_seed(global_seed: u64, component: &str) -> u64 {
    use rand::Rng;
    component_rng(global_seed, component).random()
}
