//! Scalar abstraction shared by the numerical modules.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating-point scalar the operator math is written against.
///
/// Implemented for `f32` and `f64`. File formats always store `f64`, so
/// conversion in both directions goes through [`Scalar::of`] and
/// [`Scalar::to_f64_lossy`].
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal or value into this scalar.
    #[inline]
    fn of(x: f64) -> Self {
        nalgebra::convert(x)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        // f32/f64 always convert
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn finite(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f64() {
        assert_eq!(f32::of(0.5).to_f64_lossy(), 0.5);
        assert_eq!(f64::of(-3.25), -3.25);
        assert!(!f64::of(f64::NAN).finite());
        assert!(!f32::of(f64::INFINITY).finite());
    }
}
