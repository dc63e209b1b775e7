//! Arbitrary-precision rationals with `"p/q"` text form.
//!
//! Thin wrapper over [`num_rational::BigRational`] so that serialization,
//! parsing, and a few domain helpers live in one place. The inner value is
//! always reduced (gcd 1, positive denominator), which `BigRational`
//! maintains on construction.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    pub fn new(numer: BigInt, denom: BigInt) -> Result<Self> {
        if denom.is_zero() {
            return Err(Error::InvalidInput("rational with zero denominator".into()));
        }
        Ok(Rational(BigRational::new(numer, denom)))
    }

    pub fn from_int<T: Into<BigInt>>(v: T) -> Self {
        Rational(BigRational::from_integer(v.into()))
    }

    /// `a / b` for machine integers.
    pub fn ratio(a: i64, b: i64) -> Self {
        Rational(BigRational::new(BigInt::from(a), BigInt::from(b)))
    }

    /// 2^e as an exact rational (e may be negative).
    pub fn pow2(e: i64) -> Self {
        let one = BigInt::one();
        if e >= 0 {
            Rational(BigRational::from_integer(one << e as usize))
        } else {
            Rational(BigRational::new(one, BigInt::one() << (-e) as usize))
        }
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> Self {
        Rational(self.0.recip())
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// Largest integer `≤ self`.
    pub fn floor_int(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    /// Smallest integer `≥ self`.
    pub fn ceil_int(&self) -> BigInt {
        self.0.ceil().to_integer()
    }

    /// Floor of `self · 2^q`, exact.
    pub fn floor_shifted(&self, q: i64) -> BigInt {
        (&*self * &Rational::pow2(q)).floor_int()
    }

    /// Ceiling of `self · 2^q`, exact.
    pub fn ceil_shifted(&self, q: i64) -> BigInt {
        (&*self * &Rational::pow2(q)).ceil_int()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s, "1"),
        };
        let numer = BigInt::from_str(n)
            .map_err(|e| Error::InvalidInput(format!("bad rational {s:?}: {e}")))?;
        let denom = BigInt::from_str(d)
            .map_err(|e| Error::InvalidInput(format!("bad rational {s:?}: {e}")))?;
        Rational::new(numer, denom)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((self.0).$method(rhs.0))
            }
        }
        impl $trait for &Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);
binop!(Div, div);

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl From<BigRational> for Rational {
    fn from(r: BigRational) -> Self {
        Rational(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print_round_trip() {
        for s in ["3/4", "-7/2", "0/1", "12345678901234567890/7"] {
            let r: Rational = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
        let r: Rational = "5".parse().unwrap();
        assert_eq!(r.to_string(), "5/1");
        let r: Rational = "4/8".parse().unwrap();
        assert_eq!(r.to_string(), "1/2");
    }

    #[test]
    fn zero_denominator_rejected() {
        assert!("1/0".parse::<Rational>().is_err());
    }

    #[test]
    fn floor_ceil_shifted() {
        let r = Rational::ratio(5, 3);
        assert_eq!(r.floor_shifted(2), BigInt::from(6)); // 20/3 -> 6
        assert_eq!(r.ceil_shifted(2), BigInt::from(7));
        let neg = Rational::ratio(-5, 3);
        assert_eq!(neg.floor_shifted(0), BigInt::from(-2));
    }
}
