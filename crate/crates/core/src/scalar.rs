//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that is plain linear algebra or network arithmetic is written
//! against [`Scalar`] so it runs on `f32` or `f64`. The simulation layers
//! (brain substrate, co-processor training, experiment harness) fix `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
