//! Floating-point scalar abstraction used by the simplex and ilr geometry.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumCast};

/// Real scalar the geometry modules are generic over (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Relative tolerance used for the sum-to-total invariant of a composition.
    fn sum_tolerance() -> Self;

    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 literal representable in scalar")
    }

    /// Converts a count into this scalar.
    #[inline]
    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("count representable in scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        <f64 as NumCast>::from(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    #[inline]
    fn sum_tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    #[inline]
    fn sum_tolerance() -> Self {
        1e-4
    }
}
