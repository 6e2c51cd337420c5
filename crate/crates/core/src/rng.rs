//! Seeded pseudo-random generator used by every experiment.
//!
//! The generator is xorshift64* (shift triple 12/25/27, output multiplier
//! `0x2545_F491_4F6C_DD1D`). Seeds and stream indices are mixed through the
//! SplitMix64 finalizer so that seed 0 and neighbouring trial indices give
//! unrelated, nonzero states. Both algorithms are fixed here so that results
//! can be reproduced by an independent implementation in any language.

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const XORSHIFT_STAR_MULT: u64 = 0x2545_F491_4F6C_DD1D;

/// SplitMix64 output function applied to a single word.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        Self::from_state(splitmix64(seed))
    }

    /// Independent stream number `stream` of experiment seed `seed`.
    ///
    /// Each trial of an experiment draws from its own stream, so trial
    /// outcomes do not depend on the order (or thread) in which trials run.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        Self::from_state(splitmix64(seed ^ splitmix64(stream.wrapping_add(1))))
    }

    fn from_state(state: u64) -> Self {
        // xorshift has a fixed point at zero.
        let state = if state == 0 { SPLITMIX_GAMMA } else { state };
        Self { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_STAR_MULT)
    }

    /// Uniform integer in `0..bound` by rejection (no modulo bias).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let rem = (u64::MAX % bound + 1) % bound;
        if rem == 0 {
            return self.next_u64() % bound;
        }
        let limit = 0u64.wrapping_sub(rem);
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % bound;
            }
        }
    }

    pub fn bit(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fisher-Yates shuffle, iterating from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
