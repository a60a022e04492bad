//! Scalar abstraction shared by the attention, scoring and similarity code.
//!
//! Everything numeric in the crate is written against [`Scalar`] so the same
//! search and scoring code runs in `f32` (the interchange precision) or `f64`
//! (useful for oracles and sensitivity checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Widens an interchange `f32` into this scalar type.
    fn from_wire(x: f32) -> Self {
        Self::from_f32(x).expect("f32 is representable")
    }

    /// Narrows into the interchange `f32` representation.
    fn to_wire(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Descending comparison for scores. NaN never reaches here (inputs are validated).
pub(crate) fn cmp_desc<S: Scalar>(a: S, b: S) -> std::cmp::Ordering {
    b.partial_cmp(&a).unwrap_or(std::cmp::Ordering::Equal)
}
