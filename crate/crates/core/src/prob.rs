//! Probability scalars: exact rationals for table models, `f64` otherwise.

use std::fmt::{Debug, Display};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

pub trait Scalar: Num + Clone + PartialOrd + Debug + Display {
    fn from_ratio(r: &BigRational) -> Self;
    fn from_float(x: f64) -> Self;
    fn as_f64(&self) -> f64;
    /// Absolute tolerance used when comparing derived quantities.
    fn tolerance() -> f64;
    fn is_exact() -> bool;
    fn abs_diff(&self, other: &Self) -> Self;
}

impl Scalar for f64 {
    fn from_ratio(r: &BigRational) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }
    fn from_float(x: f64) -> Self {
        x
    }
    fn as_f64(&self) -> f64 {
        *self
    }
    fn tolerance() -> f64 {
        1e-9
    }
    fn is_exact() -> bool {
        false
    }
    fn abs_diff(&self, other: &Self) -> Self {
        (self - other).abs()
    }
}

impl Scalar for BigRational {
    fn from_ratio(r: &BigRational) -> Self {
        r.clone()
    }
    fn from_float(x: f64) -> Self {
        BigRational::from_f64(x).expect("finite probability")
    }
    fn as_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn tolerance() -> f64 {
        1e-12
    }
    fn is_exact() -> bool {
        true
    }
    fn abs_diff(&self, other: &Self) -> Self {
        (self - other).abs()
    }
}

/// Parses `"p/q"`, an integer, or a decimal with optional exponent into an
/// exact rational. Decimal text is read as written, not via binary floats.
pub fn parse_ratio(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some((p, q)) = text.split_once('/') {
        let p: BigInt = p.trim().parse().ok()?;
        let q: BigInt = q.trim().parse().ok()?;
        if q.is_zero() {
            return None;
        }
        return Some(BigRational::new(p, q));
    }
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let mut r = BigRational::from_integer(digits);
    if scale >= 0 {
        r *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Some(if neg { -r } else { r })
}

/// Exact rational from a JSON number or string.
pub fn ratio_from_json(v: &serde_json::Value) -> Option<BigRational> {
    match v {
        // Numbers print in their shortest round-trip form, so 0.6 stays 3/5.
        serde_json::Value::Number(n) => parse_ratio(&n.to_string()),
        serde_json::Value::String(s) => parse_ratio(s),
        _ => None,
    }
}

pub fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

pub fn sum<S: Scalar>(xs: &[S]) -> S {
    xs.iter().cloned().fold(S::zero(), |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact() {
        assert_eq!(parse_ratio("0.6"), Some(ratio(3, 5)));
        assert_eq!(parse_ratio("0.004"), Some(ratio(1, 250)));
        assert_eq!(parse_ratio("1e-3"), Some(ratio(1, 1000)));
        assert_eq!(parse_ratio("2.5E1"), Some(ratio(25, 1)));
        assert_eq!(parse_ratio("-1"), Some(ratio(-1, 1)));
        assert_eq!(parse_ratio("3/12"), Some(ratio(1, 4)));
        assert_eq!(parse_ratio(".5"), Some(ratio(1, 2)));
        assert_eq!(parse_ratio("x"), None);
        assert_eq!(parse_ratio("1/0"), None);
        let v: serde_json::Value = serde_json::from_str("[0.1, 0.99, \"1/3\"]").unwrap();
        let r: Vec<_> = v.as_array().unwrap().iter().map(|x| ratio_from_json(x).unwrap()).collect();
        assert_eq!(r, vec![ratio(1, 10), ratio(99, 100), ratio(1, 3)]);
    }
}
