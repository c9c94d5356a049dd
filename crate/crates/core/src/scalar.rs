//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Real`], implemented for
//! `f32` and `f64`. The reference/test path runs at `f64`; `f32` is the fast
//! path with looser tolerances.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssign};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-enough conversion from `f64` (used for constants and RNG draws).
    fn from_f64(v: f64) -> Self;
    /// Conversion from `usize` for size-dependent scaling factors.
    fn from_usize(v: usize) -> Self;
    /// Widening conversion used by formatting and digests (named to avoid
    /// clashing with `ToPrimitive::to_f64`).
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn from_usize(v: usize) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn from_usize(v: usize) -> Self {
        v as f64
    }
    fn as_f64(self) -> f64 {
        self
    }
}
