//! Scalar abstraction for the numeric core.
//!
//! All math in this crate is generic over [`Scalar`], which is any real
//! field type usable with `nalgebra`, convertible from/to `f64`, uniformly
//! sampleable, and serializable. In practice that means `f32` or `f64`;
//! the crate root exposes `f64` aliases for the common instantiations.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use serde::{de::DeserializeOwned, Serialize};

pub trait Scalar:
    RealField
    + Copy
    + Default
    + FromPrimitive
    + ToPrimitive
    + SampleUniform
    + Serialize
    + DeserializeOwned
    + std::fmt::Display
    + std::iter::Sum
    + 'static
{
    /// Converts an `f64` constant into the scalar type.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 constant")
    }

    /// Lossy view as `f64`, used for reporting and integer rounding.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }
}

impl<T> Scalar for T where
    T: RealField
        + Copy
        + Default
        + FromPrimitive
        + ToPrimitive
        + SampleUniform
        + Serialize
        + DeserializeOwned
        + std::fmt::Display
        + std::iter::Sum
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulp_roundtrip<T: Scalar>() {
        assert_eq!(T::c(1.5).as_f64(), 1.5);
    }

    #[test]
    fn f32_and_f64_are_scalars() {
        ulp_roundtrip::<f32>();
        ulp_roundtrip::<f64>();
    }
}
