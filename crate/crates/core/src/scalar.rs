//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar type the crate is generic over: `f32` or `f64`.
///
/// `RealField` supplies the elementary functions and the linear algebra,
/// `FromPrimitive`/`ToPrimitive` the conversions to and from literals and
/// sampled uniforms.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + Display + Debug + Send + Sync + 'static
{
    /// Absolute tolerance for invariant checks, never tighter than what the
    /// type can resolve.
    fn tolerance(base: f64) -> Self {
        let floor = Self::default_epsilon() * Self::lit(64.0);
        let base = Self::lit(base);
        if base > floor {
            base
        } else {
            floor
        }
    }

    /// Converts an `f64` literal. Infallible for the supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_respects_precision_floor() {
        assert_eq!(f64::tolerance(1e-12), 1e-12);
        assert!(f32::tolerance(1e-12) > 1e-6);
    }
}
