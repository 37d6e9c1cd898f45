//! Counter-addressable standard normal streams.
//!
//! Each normal is produced from four 32-bit words of a ChaCha8 stream keyed by
//! `(seed, stream)`: two 53-bit uniforms feed the cosine branch of Box-Muller.
//! The `k`-th normal of a stream therefore lives at word offset `4k` and can be
//! regenerated in isolation. `ln`, `cos` and `sqrt` come from `libm`, so the
//! output is bit-identical across platforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream used for fresh Brownian increments.
pub const STREAM_SAMPLE: u64 = 0;
/// Stream used for bridge refinement.
pub const STREAM_REFINE: u64 = 1;
/// First stream handed out to derived purposes (probes, initial conditions).
pub const STREAM_DERIVED: u64 = 1 << 32;

const WORDS_PER_NORMAL: u128 = 4;

pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    /// Positions the stream so that the next draw is normal number `index`.
    pub fn new(seed: u64, stream: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(WORDS_PER_NORMAL * index as u128);
        NormalStream { rng }
    }

    /// Uniform on the open interval (0, 1).
    fn open_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.open_uniform();
        let u2 = self.open_uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    pub fn next_uniform(&mut self) -> f64 {
        let u = self.open_uniform();
        self.open_uniform();
        u
    }
}

/// Derived stream identifier for purpose `tag` and sub-index `k`.
pub fn derived_stream(tag: u32, k: u32) -> u64 {
    STREAM_DERIVED + ((tag as u64) << 20) + k as u64
}

/// Seed of the `index`-th independent chain of an experiment seeded with `seed`
/// (SplitMix64 finalizer of a Weyl step).
pub fn chain_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
