//! Working-precision abstraction for the numeric kernels.

use std::fmt::Display;
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssignOps};

/// Floating-point scalar every numeric kernel is generic over: `f32` or `f64`.
///
/// The supertraits cover arithmetic, constants, FFT support and formatting;
/// [`Scalar::cast`] converts `f64` literals into the working precision.
pub trait Scalar:
    Float + FloatConst + NumAssignOps + Sum + Display + Default + rustfft::FftNum
{
    /// Converts an `f64` constant into the working precision.
    fn cast(x: f64) -> Self;

    /// Widens to `f64` for accumulation and reporting.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn cast(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cast(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
