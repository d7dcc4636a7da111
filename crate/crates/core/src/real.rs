//! Scalar abstraction over which all moment arithmetic is written.
//!
//! Every numeric routine in this crate is generic over [`Real`] so that the
//! same code runs once with `f64` (fast path) and once with [`crate::tape::Var`]
//! (reverse-mode differentiation). The trait is deliberately minimal: only the
//! primitives that actually appear in moment propagation, Gaussian algebra,
//! and the training objective.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub const SQRT_2PI: f64 = 2.5066282746310002;
pub const LN_2PI: f64 = 1.8378770664093453;

/// Scalar type usable in all belief/moment computations.
pub trait Real:
    Copy
    + Debug
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + 'static
{
    fn from_f64(v: f64) -> Self;
    /// Current numeric value (for branching, diagnostics, and extraction).
    fn value(self) -> f64;

    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    /// Standard normal CDF Φ(x).
    fn norm_cdf(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn is_finite(self) -> bool {
        self.value().is_finite()
    }
    /// Standard normal density φ(x); composed from smooth primitives so it
    /// differentiates exactly.
    fn norm_pdf(self) -> Self {
        let half = Self::from_f64(-0.5);
        (half * self * self).exp() / Self::from_f64(SQRT_2PI)
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::one(),
            1 => self,
            2 => self * self,
            _ if n > 0 => self * self.powi(n - 1),
            _ => Self::one() / self.powi(-n),
        }
    }
    fn abs(self) -> Self {
        if self.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    fn max(self, other: Self) -> Self {
        if self.value() >= other.value() {
            self
        } else {
            other
        }
    }
}

/// Standard normal CDF for plain floats, via the error function.
pub fn norm_cdf_f64(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density for plain floats.
pub fn norm_pdf_f64(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn norm_cdf(self) -> Self {
        norm_cdf_f64(self)
    }
}
