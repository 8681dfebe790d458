//! Scalar abstraction: the numeric core is generic over the floating-point
//! element type (f32 or f64); concrete f64 aliases live at the crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar the math modules operate on.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an f64 constant (config value, RNG draw) into the working scalar.
pub fn from_f64<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 value representable in scalar type")
}

/// Converts a count (batch size, element count) into the working scalar.
pub fn from_count<F: Scalar>(n: usize) -> F {
    F::from_usize(n).expect("count representable in scalar type")
}

/// Relative error |a-b| / max(1, |a|, |b|), the gradient-check metric.
pub fn rel_err<F: Scalar>(a: F, b: F) -> F {
    (a - b).abs() / F::one().max(a.abs()).max(b.abs())
}
