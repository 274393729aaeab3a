//! Scalar abstraction shared by the numerical modules.

use std::fmt;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the reconciliation code (`f32`, `f64`).
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + fmt::Display {
    /// Converts an `f64` literal, rounding if the target is narrower.
    #[inline]
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    /// Converts a count.
    #[inline]
    fn count(n: usize) -> Self {
        nalgebra::convert(n as f64)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Largest acceptable condition number for a weight matrix, `1/sqrt(eps)`.
    #[inline]
    fn max_condition() -> Self {
        Self::one() / Self::default_epsilon().sqrt()
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + fmt::Display {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_threshold_tracks_precision() {
        let t64 = f64::max_condition();
        let t32 = f32::max_condition();
        assert!((t64 - 1.0 / f64::EPSILON.sqrt()).abs() < 1.0);
        assert!(t32 < 1e4);
    }
}
