//! Deterministic pseudo-randomness for tests, benchmarks, and parameter
//! initialization.
//!
//! The generator is a 64-bit splitmix: state advances by a fixed odd
//! increment and each output is a finalizer over the new state. The exact
//! constants are part of this crate's reproducibility contract; changing
//! them changes every seeded artifact.
//!
//! ```text
//! state    += 0x9E3779B97F4A7C15          (golden-ratio increment)
//! z         = state
//! z         = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z         = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output    = z ^ (z >> 31)
//! ```
//!
//! Floats are drawn by taking the top 53 bits, so `next_f64` is uniform on
//! `[0, 1)` and identical across platforms.

use crate::tensor::{ConvWeights, Element, Tensor4};

pub const SPLITMIX_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;
pub const SPLITMIX_MULT_1: u64 = 0xBF58_476D_1CE4_E5B9;
pub const SPLITMIX_MULT_2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    #[must_use]
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(SPLITMIX_INCREMENT);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(SPLITMIX_MULT_1);
        z = (z ^ (z >> 27)).wrapping_mul(SPLITMIX_MULT_2);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer from `[0, bound)` by scaling; bias is negligible for
    /// the small bounds used here and the method is branch-free and stable.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        let v = (self.next_f64() * bound as f64) as usize;
        v.min(bound - 1)
    }

    /// Derives an independent child stream. Used to give each training arm
    /// its own stream without coupling draw counts between arms.
    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }
}

/// Tensor with elements drawn uniformly from `[lo, hi)`. Draws happen in
/// row-major element order, so the result is fully determined by the
/// generator state.
#[must_use]
pub fn random_tensor<T: Element>(
    rng: &mut SplitMix64,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    lo: f64,
    hi: f64,
) -> Tensor4<T> {
    let mut t = Tensor4::zeros(n, c, h, w);
    for v in t.data_mut() {
        *v = T::from_f64(rng.uniform(lo, hi));
    }
    t
}

/// Convolution weights initialized uniformly in `±fan_in^(-1/2)` where
/// `fan_in = c_in * k_h * k_w`; the bias, when present, uses the same range.
/// Kernel elements are drawn before bias elements.
#[must_use]
pub fn init_conv<T: Element>(
    rng: &mut SplitMix64,
    c_out: usize,
    c_in: usize,
    k_h: usize,
    k_w: usize,
    with_bias: bool,
) -> ConvWeights<T> {
    let fan_in = (c_in * k_h * k_w) as f64;
    let bound = fan_in.sqrt().recip();
    let kernel = random_tensor(rng, c_out, c_in, k_h, k_w, -bound, bound);
    let bias = with_bias.then(|| {
        (0..c_out)
            .map(|_| T::from_f64(rng.uniform(-bound, bound)))
            .collect()
    });
    ConvWeights { kernel, bias }
}
