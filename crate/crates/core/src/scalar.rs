//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point element type for tensors, decompositions and metrics.
///
/// Implemented for `f32` and `f64`. Everything in the training stack is
/// instantiated at `f64`; `f32` is supported for the pure numerics.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Error function, evaluated in double precision.
    #[inline]
    fn error_fn(self) -> Self {
        Self::lit(libm::erf(self.to_f64_lossy()))
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erf_reference_points() {
        assert_eq!(0.0f64.error_fn(), 0.0);
        assert!((1.0f64.error_fn() - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((f32::lit(-1.0).error_fn() + 0.842_700_8).abs() < 1e-6);
    }
}
