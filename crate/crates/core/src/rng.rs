//! Labeled random substreams.
//!
//! Every source of randomness in a run is derived from one root seed. A
//! substream named `label` is seeded with `root + fnv1a64(label)` (wrapping)
//! and expanded through SplitMix64 into a xoshiro256** state, so two streams
//! with different labels never share state and re-implementations can match
//! the sequence bit-for-bit.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Seeds a generator for the stream `label` under `root`.
pub fn substream(root: u64, label: &str) -> Rng {
    // seed_from_u64 runs SplitMix64 to fill the xoshiro state.
    Rng::seed_from_u64(root.wrapping_add(fnv1a64(label.as_bytes())))
}

/// Derives a 64-bit seed (not a generator) for a labeled, indexed event such
/// as "evaluation episode `j` at env step `t`".
pub fn derive_seed(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut rng = substream(root, label);
    let mut seed: u64 = rand::RngCore::next_u64(&mut rng);
    for &i in indices {
        seed = splitmix64(seed ^ splitmix64(i.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    seed
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
