//! Sign + log-magnitude numbers.
//!
//! Derivatives of Laplace exponents alternate in sign and their magnitudes
//! (ratios of gamma functions) overflow `f64` long before the orders a sampler
//! asks for, so every PMF and Gibbs weight is assembled in this form.

use std::cmp::Ordering;
use std::ops::{Div, Mul, Neg};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogValue {
    sign: i8,
    log_mag: f64,
}

impl SignedLogValue {
    pub const ZERO: SignedLogValue = SignedLogValue {
        sign: 0,
        log_mag: f64::NEG_INFINITY,
    };
    pub const ONE: SignedLogValue = SignedLogValue {
        sign: 1,
        log_mag: 0.0,
    };

    /// Builds a value from a sign and `ln|x|`. A sign of zero or a magnitude of
    /// `-inf` both collapse to zero.
    pub fn new(sign: i8, log_mag: f64) -> Self {
        if sign == 0 || log_mag == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        debug_assert!(!log_mag.is_nan(), "NaN log magnitude");
        SignedLogValue {
            sign: sign.signum(),
            log_mag,
        }
    }

    pub fn positive(log_mag: f64) -> Self {
        Self::new(1, log_mag)
    }

    pub fn from_f64(x: f64) -> Self {
        match x.partial_cmp(&0.0) {
            Some(Ordering::Greater) => Self::new(1, x.ln()),
            Some(Ordering::Less) => Self::new(-1, (-x).ln()),
            _ => Self::ZERO,
        }
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn log_mag(&self) -> f64 {
        self.log_mag
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0
    }

    pub fn to_f64(&self) -> f64 {
        f64::from(self.sign) * self.log_mag.exp()
    }

    pub fn abs(&self) -> Self {
        Self::new(self.sign.abs(), self.log_mag)
    }

    /// Signed log-sum-exp.
    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return *other;
        }
        if other.is_zero() {
            return *self;
        }
        let (hi, lo) = if self.log_mag >= other.log_mag {
            (self, other)
        } else {
            (other, self)
        };
        let diff = lo.log_mag - hi.log_mag;
        if hi.sign == lo.sign {
            Self::new(hi.sign, hi.log_mag + diff.exp().ln_1p())
        } else if diff == 0.0 {
            Self::ZERO
        } else {
            Self::new(hi.sign, hi.log_mag + (-diff.exp()).ln_1p())
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&-*other)
    }

    pub fn powi(&self, k: i32) -> Self {
        if k == 0 {
            return Self::ONE;
        }
        let sign = if k % 2 == 0 { self.sign.abs() } else { self.sign };
        Self::new(sign, self.log_mag * f64::from(k))
    }

    /// Sum of an iterator of values, accumulated in log space.
    pub fn sum<'a, I: IntoIterator<Item = &'a SignedLogValue>>(iter: I) -> Self {
        iter.into_iter().fold(Self::ZERO, |acc, v| acc.add(v))
    }
}

impl Mul for SignedLogValue {
    type Output = SignedLogValue;
    fn mul(self, rhs: SignedLogValue) -> SignedLogValue {
        SignedLogValue::new(self.sign * rhs.sign, self.log_mag + rhs.log_mag)
    }
}

impl Div for SignedLogValue {
    type Output = SignedLogValue;
    fn div(self, rhs: SignedLogValue) -> SignedLogValue {
        assert!(!rhs.is_zero(), "division by signed-log zero");
        SignedLogValue::new(self.sign * rhs.sign, self.log_mag - rhs.log_mag)
    }
}

impl Neg for SignedLogValue {
    type Output = SignedLogValue;
    fn neg(self) -> SignedLogValue {
        SignedLogValue {
            sign: -self.sign,
            log_mag: self.log_mag,
        }
    }
}

/// `ln(Σ exp(x_i))`, `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
