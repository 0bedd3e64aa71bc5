//! Scalar abstraction over f32/f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of tensors: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from f64 literals and intermediate math.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    /// Widen to f64 for mixed-precision accumulation and reporting.
    fn to_f64_lit(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
