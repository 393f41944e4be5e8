//! Counter-based noise streams.
//!
//! Every random draw in the crate comes from a stream identified by a
//! [`StreamKey`]. Streams are independent of evaluation order, so parallel
//! and serial runs see the same numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Lane identifiers separate streams that share (seed, trial, step).
pub mod lane {
    pub const FORWARD: u64 = 0;
    pub const REVERSE: u64 = 1;
    pub const ELBO: u64 = 2;
    pub const RENDER: u64 = 3;
    pub const TASK: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const TRAIN_NOISE: u64 = 7;
    pub const TRAIN_STEP: u64 = 8;
    pub const PAIRS: u64 = 9;
    pub const FIXTURE: u64 = 10;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub step: u64,
    pub lane: u64,
}

impl StreamKey {
    pub fn new(seed: u64, trial: u64, step: u64, lane: u64) -> Self {
        Self { seed, trial, step, lane }
    }

    /// Folds the key into a single 64-bit seed.
    pub fn fold(&self) -> u64 {
        let mut h = splitmix64(self.seed ^ 0x5e1f_e7a1_0000_0001);
        for v in [self.trial, self.step, self.lane] {
            h = splitmix64(h ^ splitmix64(v.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        h
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.fold())
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal vector of length `dim` for the given key.
pub fn normal_vec(key: StreamKey, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    fill_normal(key, &mut out);
    out
}

pub fn fill_normal(key: StreamKey, out: &mut [f64]) {
    let mut rng = key.rng();
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
