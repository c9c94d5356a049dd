//! Desk-scale training infrastructure for any-to-any multimodal
//! encoder-decoders.
//!
//! The crate covers the machinery around the transformer, not the
//! transformer itself:
//!
//! - [`token_space`]: the unified discrete vocabulary and the codecs turning
//!   points, boxes, camera poses, 3D cuboids, keypoints, and robot actions
//!   into token sequences (plus constrained-decoding masks).
//! - [`modality`]: deterministic shape, budget, and segment arithmetic for
//!   every modality, and the dense-label RGB conversions.
//! - [`kernels`]: 2D rotary embeddings, QK-normalized and scaled-cosine
//!   attention with analytic backward passes, and the perceiver resampler.
//! - [`denoiser`]: the multimodal mixture of denoisers -- paradigm prefixes,
//!   span corruption, patch masking, dynamic decoder masks, sparse patterns.
//! - [`packer`]: dynamic two-example sequence packing with one-hot matrices,
//!   segment-gated attention masks, and the streaming pool heuristic.
//! - [`pipeline`]: training-sample construction, mixture presets, prompt
//!   markers, and optimizer schedule math.
//! - [`decoding`]: nucleus sampling, classifier-free guidance, the EOS gate,
//!   and non-maximum suppression.
//!
//! Numeric kernels are generic over the scalar type through [`Real`]
//! (`f32`/`f64`); `f64` is the reference path used by the test oracles, and
//! the aliases below pin it by name.

pub mod decoding;
pub mod denoiser;
pub mod error;
pub mod kernels;
pub mod modality;
pub mod packer;
pub mod pipeline;
pub mod rle;
pub mod scalar;
pub mod token_space;

pub use error::{Error, Result};
pub use scalar::Real;

/// Reference-precision attention case.
pub type AttentionCase64 = kernels::AttentionCase<f64>;
/// Fast-path attention case with looser tolerances.
pub type AttentionCase32 = kernels::AttentionCase<f32>;
/// Reference-precision decode-step distribution.
pub type StepDistribution64 = decoding::StepDistribution<f64>;
/// Fast-path decode-step distribution.
pub type StepDistribution32 = decoding::StepDistribution<f32>;
/// Reference-precision resampler parameters.
pub type ResamplerParams64 = kernels::ResamplerParams<f64>;
