//! Scalar abstraction: the whole library is generic over the floating-point
//! type through [`Real`], with `f32` and `f64` as the provided instances.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable everywhere in this crate.
///
/// `nalgebra::RealField` supplies the transcendental functions and the
/// decompositions (Cholesky, symmetric eigen, SVD); the `num-traits`
/// conversions move constants and diagnostics across precisions.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + std::fmt::LowerExp
{
    /// Lossy conversion from `f64`, for literals and tolerances.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Real")
    }

    /// Conversion from a dimension or count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in any Real")
    }

    /// Widening conversion used for reporting and file output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
