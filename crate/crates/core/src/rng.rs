//! Deterministic random streams.
//!
//! Every draw in an experiment comes from a ChaCha8 stream keyed by
//! `(seed, trial, purpose, index)`, so a step can be replayed in isolation and
//! changing one step's batch size never shifts the randomness of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Problem construction: anchors, initial point.
    Problem,
    /// Oracle draws of optimizer step `index`.
    Step,
    /// Replicate `index` of a frozen-state Monte Carlo expectation.
    Replicate,
    /// Moment estimation and calibration.
    Moment,
    /// Hölder constant probing.
    Probe,
    /// Anything else a caller needs, distinguished by `index`.
    Aux,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Problem => 0x01,
            Purpose::Step => 0x02,
            Purpose::Replicate => 0x03,
            Purpose::Moment => 0x04,
            Purpose::Probe => 0x05,
            Purpose::Aux => 0x06,
        }
    }
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one independent stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub trial: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, trial: u64, purpose: Purpose, index: u64) -> Self {
        StreamKey {
            seed,
            trial,
            purpose,
            index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed;
        let mut key = [0u8; 32];
        let words = [self.trial, self.purpose.tag(), self.index, 0x6D75_6F6E];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            state ^= w;
            let v = splitmix64(&mut state);
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

/// Stream for optimizer step `t` of `trial`.
pub fn step_rng(seed: u64, trial: u64, t: u64) -> ChaCha8Rng {
    StreamKey::new(seed, trial, Purpose::Step, t).rng()
}
