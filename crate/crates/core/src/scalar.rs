//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating point element type of tensors.
///
/// Implemented for `f32` and `f64`. Training and gradient checks are run in
/// `f64`; `f32` is supported for inference-style use.
pub trait Scalar:
    'static
    + Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Default
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar representable as f64")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        Self::lit(v as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
