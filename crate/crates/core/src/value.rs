//! Exact rational quantities.
//!
//! Every cost in the crate is a [`Value`]: an exact rational backed by
//! `Ratio<i128>`. Sums are associative and commutative, so aggregation never
//! depends on record order.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Value(Ratio<i128>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid number '{0}': expected an integer, a decimal such as 0.5, or a fraction such as 1/3")]
pub struct ParseValueError(pub String);

impl Value {
    pub const ZERO: Value = Value(Ratio::new_raw(0, 1));

    pub fn from_integer(n: i128) -> Self {
        Value(Ratio::from_integer(n))
    }

    /// Panics when `denom` is zero.
    pub fn new(numer: i128, denom: i128) -> Self {
        Value(Ratio::new(numer, denom))
    }

    pub fn ratio(&self) -> Ratio<i128> {
        self.0
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// The integer part when the value is whole.
    pub fn to_integer(&self) -> Option<i128> {
        self.0.is_integer().then(|| self.0.to_integer())
    }
}

impl From<i32> for Value {
    fn from(n: i32) -> Self {
        Value::from_integer(n as i128)
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::from_integer(n as i128)
    }
}

impl From<u32> for Value {
    fn from(n: u32) -> Self {
        Value::from_integer(n as i128)
    }
}

impl Add for Value {
    type Output = Value;
    fn add(self, rhs: Value) -> Value {
        Value(self.0 + rhs.0)
    }
}

impl AddAssign for Value {
    fn add_assign(&mut self, rhs: Value) {
        self.0 += rhs.0;
    }
}

impl Sub for Value {
    type Output = Value;
    fn sub(self, rhs: Value) -> Value {
        Value(self.0 - rhs.0)
    }
}

impl Mul for Value {
    type Output = Value;
    fn mul(self, rhs: Value) -> Value {
        Value(self.0 * rhs.0)
    }
}

impl Sum for Value {
    fn sum<I: Iterator<Item = Value>>(iter: I) -> Value {
        iter.fold(Value::ZERO, |acc, v| acc + v)
    }
}

impl<'a> Sum<&'a Value> for Value {
    fn sum<I: Iterator<Item = &'a Value>>(iter: I) -> Value {
        iter.copied().sum()
    }
}

/// Whole numbers print bare, terminating fractions print as decimals, and
/// anything else prints as `numer/denom`. The output always parses back to
/// the same value.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            return write!(f, "{}", self.0.to_integer());
        }
        match decimal_digits(self.0) {
            Some(s) => f.write_str(&s),
            None => write!(f, "{}/{}", self.0.numer(), self.0.denom()),
        }
    }
}

fn decimal_digits(r: Ratio<i128>) -> Option<String> {
    let mut denom = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while denom % 2 == 0 {
        denom /= 2;
        twos += 1;
    }
    while denom % 5 == 0 {
        denom /= 5;
        fives += 1;
    }
    if denom != 1 {
        return None;
    }
    let places = twos.max(fives);
    let scale = 10i128.checked_pow(places)?;
    let scaled = (r * Ratio::from_integer(scale)).to_integer();
    let sign = if scaled < 0 { "-" } else { "" };
    let abs = scaled.unsigned_abs();
    let int = abs / scale as u128;
    let frac = abs % scale as u128;
    Some(format!("{sign}{int}.{frac:0width$}", width = places as usize))
}

impl FromStr for Value {
    type Err = ParseValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseValueError(s.to_string());
        let t = s.trim();
        if t.is_empty() {
            return Err(err());
        }
        if let Some((n, d)) = t.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| err())?;
            let d: i128 = d.trim().parse().map_err(|_| err())?;
            if d == 0 {
                return Err(err());
            }
            return Ok(Value::new(n, d));
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let digits = format!("{int_part}{frac_part}");
        let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| err())? };
        let denom = 10i128.checked_pow(frac_part.len() as u32).ok_or_else(err)?;
        let v = Value::new(numer, denom);
        Ok(if neg { Value::ZERO - v } else { v })
    }
}

/// Accepts TOML integers or strings (`"0.5"`, `"1/3"`). Floats are refused
/// so that no binary rounding sneaks into a fixture.
impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ValueVisitor;

        impl Visitor<'_> for ValueVisitor {
            type Value = Value;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an integer or a quoted rational such as \"0.5\" or \"1/3\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Value, E> {
                Ok(Value::from(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Value, E> {
                Ok(Value::from_integer(v as i128))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Value, E> {
                v.parse().map_err(E::custom)
            }
        }

        deserializer.deserialize_any(ValueVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_integers_decimals_and_fractions() {
        assert_eq!("17".parse::<Value>().unwrap(), Value::from(17));
        assert_eq!("0.5".parse::<Value>().unwrap(), Value::new(1, 2));
        assert_eq!("1/3".parse::<Value>().unwrap(), Value::new(1, 3));
        assert_eq!("-2.25".parse::<Value>().unwrap(), Value::new(-9, 4));
        assert_eq!(".5".parse::<Value>().unwrap(), Value::new(1, 2));
        assert!("".parse::<Value>().is_err());
        assert!("1/0".parse::<Value>().is_err());
        assert!("abc".parse::<Value>().is_err());
        assert!("1e3".parse::<Value>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for v in [
            Value::from(0),
            Value::from(21),
            Value::new(1, 2),
            Value::new(-7, 8),
            Value::new(1, 3),
            Value::new(22, 7),
        ] {
            assert_eq!(v.to_string().parse::<Value>().unwrap(), v, "{v}");
        }
        assert_eq!(Value::new(1, 8).to_string(), "0.125");
        assert_eq!(Value::new(1, 3).to_string(), "1/3");
    }

    #[test]
    fn sums_are_exact() {
        let third = Value::new(1, 3);
        let total: Value = [third, third, third].iter().sum();
        assert_eq!(total, Value::from(1));
    }
}
