//! Scalar element abstraction over `f32`/`f64`.
//!
//! Transcendentals go through `libm` so the crate builds without `std` and
//! produces the same bits regardless of which feature set is enabled.

use core::fmt::{Debug, Display};
use core::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point element type of a tensor. Training runs in `f32`,
/// gradient checking in `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn floor(self) -> Self;

    fn maximum(self, other: Self) -> Self;
    fn minimum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
}

impl Element for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::logf(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrtf(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabsf(self)
    }
    #[inline]
    fn floor(self) -> Self {
        libm::floorf(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other { self } else { other }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other { self } else { other }
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Element for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        libm::log(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        libm::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        libm::fabs(self)
    }
    #[inline]
    fn floor(self) -> Self {
        libm::floor(self)
    }
    #[inline]
    fn maximum(self, other: Self) -> Self {
        if self > other { self } else { other }
    }
    #[inline]
    fn minimum(self, other: Self) -> Self {
        if self < other { self } else { other }
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// `floor` for concrete `f64` call sites outside generic code.
#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

/// `ceil` for concrete `f64` call sites outside generic code.
#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Natural exponential on `f64`.
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Natural logarithm on `f64`.
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Square root on `f64`.
#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

/// Cosine on `f64`.
#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_roundtrip_and_consts() {
        assert_eq!(f32::from_f64(1.5), 1.5f32);
        assert_eq!(1.5f64.to_f64(), 1.5);
        assert_eq!(<f32 as Element>::ZERO, 0.0);
        assert_eq!(<f64 as Element>::ONE, 1.0);
    }

    #[test]
    fn transcendentals_match_reference_values() {
        assert!((Element::exp(1.0f64) - core::f64::consts::E).abs() < 1e-15);
        assert!((Element::ln(core::f64::consts::E) - 1.0).abs() < 1e-15);
        assert!((Element::sqrt(4.0f32) - 2.0).abs() < 1e-7);
        assert_eq!(Element::floor(-1.5f64), -2.0);
    }
}
