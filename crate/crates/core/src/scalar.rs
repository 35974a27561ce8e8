//! Scalar abstraction for all tensor math.
//!
//! Every numeric kernel in this crate is generic over [`Scalar`], which is
//! blanket-implemented for `f32` and `f64`. The default precision for
//! verification (gradient checks, oracle comparisons, the acceptance suite)
//! is `f64`; `f32` is available as a speed mode. Record data on the ingest
//! side stays `f64` and is converted once when a batch tensor is assembled.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type usable by every kernel in this crate.
///
/// The bound set is deliberately small: `Float` for the math, assign ops for
/// in-place accumulation, and `f64` conversions for the data boundary
/// (records, metrics, and serialization are all `f64`-based).
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Convert from `f64`, possibly losing precision (`f32` mode).
    #[inline]
    fn from_real(x: f64) -> Self {
        // `from_f64` is total for f32/f64 (it is a plain `as` cast).
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to scalar")
    }

    /// Widen to `f64` for reporting and metrics.
    #[inline]
    fn to_real(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar converts to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + Default
        + std::fmt::Debug
        + std::fmt::Display
        + Send
        + Sync
        + 'static
{
}
