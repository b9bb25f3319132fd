//! Floating-point abstraction shared by the probability matrix, the sampling
//! trees and the samplers.
//!
//! Production training runs in `f32`; oracles and exactness checks use `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used for probabilities and prefix sums: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Mantissa-width uniform value in `[0, 1)` built from 64 random bits.
    fn unit_from_bits(bits: u64) -> Self;

    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    fn from_count(c: u32) -> Self {
        <Self as FromPrimitive>::from_u32(c).expect("u32 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float converts to f64")
    }
}

impl Scalar for f32 {
    #[inline]
    fn unit_from_bits(bits: u64) -> f32 {
        (bits >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }

    #[inline]
    fn from_count(c: u32) -> f32 {
        c as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn unit_from_bits(bits: u64) -> f64 {
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn from_count(c: u32) -> f64 {
        c as f64
    }
}
