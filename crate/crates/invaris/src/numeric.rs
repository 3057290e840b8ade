//! Exact arithmetic helpers shared across the crate.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow};

/// `base` raised to a non-negative integer exponent, exactly.
pub fn int_pow(base: &BigInt, exp: u64) -> BigInt {
    Pow::pow(base, exp)
}

/// Rational power with a non-negative integer exponent.
///
/// A reduced fraction stays reduced under componentwise powers, so this
/// avoids the gcd pass of `Ratio::new`.
pub fn rat_pow(base: &BigRational, exp: u64) -> BigRational {
    if exp == 0 {
        return BigRational::one();
    }
    BigRational::new_raw(Pow::pow(base.numer(), exp), Pow::pow(base.denom(), exp))
}

/// Renders a rational without a trailing `/1` for integers.
pub fn rat_display(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}
