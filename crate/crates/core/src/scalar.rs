//! Floating-point abstraction for the numeric core.
//!
//! Everything that does arithmetic — autodiff, networks, environments,
//! training — is generic over [`Scalar`] so the whole stack can run at `f32`
//! or `f64`. The crate-root aliases fix `f64` as the default.

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
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
    /// Converts from `f64`, panicking on values the type cannot represent.
    /// Used for literals and config constants, which are always finite.
    fn fl(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant representable in scalar type")
    }

    fn from_usize_(v: usize) -> Self {
        Self::from_usize(v).expect("usize representable in scalar type")
    }

    fn to_f64_(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `T::fl` at call sites that would otherwise drown in turbofish.
pub fn fl<T: Scalar>(v: f64) -> T {
    T::fl(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_conversion_roundtrips() {
        assert_eq!(fl::<f64>(0.25), 0.25);
        assert_eq!(fl::<f32>(0.25), 0.25f32);
        assert_eq!(f64::from_usize_(484), 484.0);
    }
}
