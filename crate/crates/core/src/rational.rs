//! Exact rational arithmetic used for every rate, bandwidth and time quantity.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;

pub type Rational = num_rational::BigRational;

/// Builds an integral rational.
pub fn int<T: Into<BigInt>>(value: T) -> Rational {
    Rational::from_integer(value.into())
}

/// Builds `num / den`. Panics on a zero denominator.
pub fn ratio<N: Into<BigInt>, D: Into<BigInt>>(num: N, den: D) -> Rational {
    Rational::new(num.into(), den.into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RationalParseError(pub String);

impl fmt::Display for RationalParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid number `{}`", self.0)
    }
}

impl std::error::Error for RationalParseError {}

/// Parses a decimal rational: `-12`, `29.97`, `2.5e9`, `200e6` or a fraction `30000/1001`.
///
/// Only `.` is accepted as decimal separator; no thousands separators, no
/// leading `+`, no whitespace inside the literal.
pub fn parse_rational(text: &str) -> Result<Rational, RationalParseError> {
    let err = || RationalParseError(text.to_string());
    if let Some((num, den)) = text.split_once('/') {
        let num = parse_integer(num).ok_or_else(err)?;
        let den = parse_integer(den).ok_or_else(err)?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(Rational::new(num, den));
    }

    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = text[pos + 1..]
                .parse()
                .ok()
                .filter(|_| !text[pos + 1..].starts_with('+'))
                .ok_or_else(err)?;
            (&text[..pos], exp)
        }
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    if exponent.unsigned_abs() > 400 {
        return Err(err());
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut numerator: BigInt = if all_digits.is_empty() {
        BigInt::zero()
    } else {
        all_digits.parse().map_err(|_| err())?
    };
    if negative {
        numerator = -numerator;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10);
    Ok(if scale >= 0 {
        Rational::from_integer(numerator * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(numerator, num_traits::pow(ten, (-scale) as usize))
    })
}

fn parse_integer(text: &str) -> Option<BigInt> {
    let digits = text.strip_prefix('-').unwrap_or(text);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse().ok()
}

/// Canonical text form: `n` for integers, a finite decimal when the
/// denominator has only 2 and 5 as prime factors, `n/d` otherwise.
/// The output always re-parses exactly with [`parse_rational`].
pub fn format_rational(value: &Rational) -> String {
    if value.is_integer() {
        return value.numer().to_string();
    }
    let den = value.denom();
    let (twos, rest) = strip_factor(den, 2);
    let (fives, rest) = strip_factor(&rest, 5);
    if rest.is_one() {
        let places = twos.max(fives);
        let scaled = value * int(num_traits::pow(BigInt::from(10), places));
        let digits = scaled.numer().abs().to_string();
        let digits = format!("{digits:0>width$}", width = places + 1);
        let (int_part, frac_part) = digits.split_at(digits.len() - places);
        let sign = if value.is_negative() { "-" } else { "" };
        return format!("{sign}{int_part}.{frac_part}");
    }
    format!("{}/{}", value.numer(), value.denom())
}

fn strip_factor(value: &BigInt, factor: u32) -> (usize, BigInt) {
    let factor = BigInt::from(factor);
    let mut count = 0;
    let mut rest = value.clone();
    loop {
        let (q, r) = rest.div_rem(&factor);
        if !r.is_zero() {
            return (count, rest);
        }
        rest = q;
        count += 1;
    }
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Rounds to the nearest integer, halves away from zero.
pub fn round_half_away(value: &Rational) -> BigInt {
    let half = ratio(1, 2);
    let magnitude = (value.abs() + half).floor().to_integer();
    if value.is_negative() {
        -magnitude
    } else {
        magnitude
    }
}

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u64 {
    debug_assert!(n >= 1);
    if n <= 1 {
        0
    } else {
        64 - u64::from((n - 1).leading_zeros())
    }
}
