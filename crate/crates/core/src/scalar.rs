//! Scalar abstraction: the numeric core is generic over the float type.
//!
//! Training runs in `f32`; gradient verification runs the same code paths in
//! `f64`. Checkpoints always store raw 32-bit values.

use std::fmt::{Debug, Display};

/// Floating-point scalar usable throughout the numeric core.
pub trait Scalar:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (used for literals and config values).
    fn from_f64(x: f64) -> Self;
    /// Widening conversion to `f64` (used for reporting and oracles).
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Shorthand for `S::from_f64` at call sites with heavy literal use.
#[inline]
pub fn s<S: Scalar>(x: f64) -> S {
    S::from_f64(x)
}
