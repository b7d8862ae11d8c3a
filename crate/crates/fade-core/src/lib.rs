//! Dynamic ×2 feature upsampling built from three pieces: content-aware
//! kernel prediction driven jointly by a high-resolution encoder feature and
//! a low-resolution decoder feature, kernel reassembly of the decoder
//! feature, and an optional decoder-conditioned gate that blends the
//! reassembled map with the encoder feature.
//!
//! Everything is deterministic: tensors are plain row-major buffers,
//! reductions run in a fixed order, and all randomness flows from an
//! explicitly seeded generator ([`rng::SplitMix64`]). Operators are generic
//! over [`tensor::Element`] so the same code path serves f32 production runs
//! and f64 certification runs.

#![forbid(unsafe_code)]

pub mod autograd;
pub mod experiments;
pub mod kernel_gen;
pub mod profiler;
pub mod rng;
pub mod tensor;
pub mod upsample;
pub mod verify;

pub use tensor::{ConvWeights, Element, OpError, Padding, Tensor4};
