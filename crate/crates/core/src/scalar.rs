//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Kernels, indexes and scorers are written against [`Real`] so they can run
//! at either `f32` or `f64` precision. On-disk formats always store `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// A floating point type usable as the computation scalar.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant or intermediate into this scalar.
    fn of(value: f64) -> Self;

    /// Widens to `f64` (lossless for both supported types).
    fn as_f64(self) -> f64;

    /// Narrows to the `f32` storage representation.
    fn as_f32(self) -> f32;

    fn of_f32(value: f32) -> Self;
}

impl Real for f64 {
    #[inline]
    fn of(value: f64) -> Self {
        value
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
    #[inline]
    fn of_f32(value: f32) -> Self {
        f64::from(value)
    }
}

impl Real for f32 {
    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
    #[inline]
    fn of_f32(value: f32) -> Self {
        value
    }
}
