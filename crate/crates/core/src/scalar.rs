//! Scalar abstraction for the analytical metrics.
//!
//! Every metric is a ratio of integer counts (bytes, blocks, FLOPs) and
//! integer machine rates, so the formulas can be evaluated in floating point
//! for the tuning pipeline or in exact rational arithmetic for oracles.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, ToPrimitive};

pub trait Scalar: Num + Clone + PartialOrd + Debug + FromPrimitive + ToPrimitive {
    /// Slack applied when comparing a metric against a sweep threshold.
    fn tolerance() -> Self;

    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("every scalar type represents u64 counts")
    }

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if b < a {
            b
        } else {
            a
        }
    }
}

impl Scalar for f64 {
    fn tolerance() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn tolerance() -> Self {
        1e-5
    }
}

impl Scalar for BigRational {
    fn tolerance() -> Self {
        BigRational::from_integer(BigInt::from(0))
    }

    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

/// Exact rational `num / den` as a [`BigRational`].
pub fn exact(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_exact_for_rationals() {
        let r: BigRational = Scalar::ratio(81, 160);
        assert_eq!(r, exact(81, 160));
        assert!((r.to_f64_lossy() - 0.50625).abs() < 1e-15);
    }

    #[test]
    fn max_min_helpers() {
        assert_eq!(f64::max_of(1.0, 2.0), 2.0);
        assert_eq!(f32::min_of(1.0, 2.0), 1.0);
        assert_eq!(BigRational::max_of(exact(1, 3), exact(1, 2)), exact(1, 2));
    }
}
