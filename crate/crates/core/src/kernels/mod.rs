//! Numerical attention kernels with the three stability changes -- 2D rotary
//! embeddings, QK normalization, scaled cosine attention -- plus the
//! perceiver resampler forward pass. Attention cores come with analytic
//! backward passes validated against finite differences.

pub mod attention;
pub mod fixture;
pub mod gradcheck;
pub mod resampler;
pub mod rope;

pub use attention::{
    cosine_attention, cosine_attention_backward, qk_norm_attention, qk_norm_attention_backward,
    AttentionCase, AttentionGrads, AttentionKind, AttentionOutput, CosineGrads, CosineParams,
    QkNormGrads, QkNormParams, COS_EPS, LN_EPS, SCALE_MAX, SCALE_MIN,
};
pub use gradcheck::{check_attention, GradCheckReport, ParamReport, FD_STEP, FD_TOLERANCE};
pub use resampler::{resample, QueryMode, ResamplerConfig, ResamplerLayerParams, ResamplerParams};
pub use rope::{rope_1d, rope_2d, ROPE_BASE};
