// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scalar abstraction for the numeric kernels.
//!
//! All model math is generic over [`Scalar`] so the same code runs in f32
//! (the on-disk and default precision) or f64. Containers always store f32;
//! conversion happens at the storage boundary.

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Widen a stored f32 element. Exact for both f32 and f64.
    fn from_storage(v: f32) -> Self;

    /// Narrow to the f32 storage format (rounds for f64).
    fn to_storage(self) -> f32;

    /// Convert a configuration constant.
    fn from_config(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn from_storage(v: f32) -> Self {
        v
    }
    #[inline]
    fn to_storage(self) -> f32 {
        self
    }
    #[inline]
    fn from_config(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_storage(v: f32) -> Self {
        f64::from(v)
    }
    #[inline]
    fn to_storage(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_config(v: f64) -> Self {
        v
    }
}
