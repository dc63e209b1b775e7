//! Exact dyadic rationals `m · 2^e` with odd (or zero) mantissa.
//!
//! All interval endpoints of the construction are dyadic in the scaled
//! projection coordinate, so the hot paths of stage building compare and add
//! these numbers only; no general rationals appear there.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rational::Rational;

/// Value `mantissa · 2^exponent`; `mantissa` is odd or zero, zero has exponent 0.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Dyadic {
    mantissa: BigInt,
    exponent: i64,
}

impl Dyadic {
    pub fn new(mantissa: BigInt, exponent: i64) -> Self {
        let mut d = Dyadic { mantissa, exponent };
        d.normalize();
        d
    }

    pub fn zero() -> Self {
        Dyadic { mantissa: BigInt::zero(), exponent: 0 }
    }

    pub fn one() -> Self {
        Dyadic { mantissa: BigInt::from(1), exponent: 0 }
    }

    pub fn from_int<T: Into<BigInt>>(v: T) -> Self {
        Dyadic::new(v.into(), 0)
    }

    /// 2^e.
    pub fn pow2(e: i64) -> Self {
        Dyadic { mantissa: BigInt::from(1), exponent: e }
    }

    fn normalize(&mut self) {
        if self.mantissa.is_zero() {
            self.exponent = 0;
            return;
        }
        let tz = self.mantissa.trailing_zeros().unwrap_or(0);
        if tz > 0 {
            self.mantissa >>= tz;
            self.exponent += tz as i64;
        }
    }

    pub fn mantissa(&self) -> &BigInt {
        &self.mantissa
    }

    pub fn exponent(&self) -> i64 {
        self.exponent
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.mantissa.is_negative()
    }

    /// Mantissa aligned to exponent `e` (requires `e ≤ self.exponent`).
    fn aligned(&self, e: i64) -> BigInt {
        debug_assert!(e <= self.exponent || self.mantissa.is_zero());
        if self.mantissa.is_zero() {
            BigInt::zero()
        } else {
            &self.mantissa << (self.exponent - e) as usize
        }
    }

    pub fn mul_pow2(&self, e: i64) -> Self {
        if self.mantissa.is_zero() {
            Dyadic::zero()
        } else {
            Dyadic { mantissa: self.mantissa.clone(), exponent: self.exponent + e }
        }
    }

    pub fn mul_int(&self, v: &BigInt) -> Self {
        Dyadic::new(&self.mantissa * v, self.exponent)
    }

    pub fn to_rational(&self) -> Rational {
        &Rational::from_int(self.mantissa.clone()) * &Rational::pow2(self.exponent)
    }

    pub fn to_f64(&self) -> f64 {
        // Good enough for reporting; exact paths never use this.
        self.mantissa.to_f64().unwrap_or(f64::NAN) * (self.exponent as f64).exp2()
    }

    /// Largest integer `≤ self · 2^q`, exact.
    pub fn floor_shifted(&self, q: i64) -> BigInt {
        if self.mantissa.is_zero() {
            return BigInt::zero();
        }
        let e = self.exponent + q;
        if e >= 0 {
            &self.mantissa << e as usize
        } else {
            // floor division by 2^{-e}: arithmetic shift right rounds toward
            // negative infinity for BigInt as well
            let shift = (-e) as usize;
            if self.mantissa.is_negative() {
                let ceil_mag: BigInt =
                    ((-&self.mantissa) + ((BigInt::from(1) << shift) - 1)) >> shift;
                -ceil_mag
            } else {
                &self.mantissa >> shift
            }
        }
    }

    /// Smallest integer `≥ self · 2^q`, exact.
    pub fn ceil_shifted(&self, q: i64) -> BigInt {
        -((-self.clone()).floor_shifted(q))
    }

    pub fn cmp_exact(&self, other: &Dyadic) -> Ordering {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return other.mantissa.sign().cmp(&num_bigint::Sign::NoSign).reverse(),
            (false, true) => return self.mantissa.sign().cmp(&num_bigint::Sign::NoSign),
            _ => {}
        }
        let e = self.exponent.min(other.exponent);
        self.aligned(e).cmp(&other.aligned(e))
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp_exact(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_exact(other)
    }
}

impl Add for &Dyadic {
    type Output = Dyadic;
    fn add(self, rhs: &Dyadic) -> Dyadic {
        if self.is_zero() {
            return rhs.clone();
        }
        if rhs.is_zero() {
            return self.clone();
        }
        let e = self.exponent.min(rhs.exponent);
        Dyadic::new(self.aligned(e) + rhs.aligned(e), e)
    }
}

impl Sub for &Dyadic {
    type Output = Dyadic;
    fn sub(self, rhs: &Dyadic) -> Dyadic {
        if rhs.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return -rhs.clone();
        }
        let e = self.exponent.min(rhs.exponent);
        Dyadic::new(self.aligned(e) - rhs.aligned(e), e)
    }
}

impl Mul for &Dyadic {
    type Output = Dyadic;
    fn mul(self, rhs: &Dyadic) -> Dyadic {
        Dyadic::new(&self.mantissa * &rhs.mantissa, self.exponent + rhs.exponent)
    }
}

impl Neg for Dyadic {
    type Output = Dyadic;
    fn neg(self) -> Dyadic {
        let exponent = if self.mantissa.is_zero() { 0 } else { self.exponent };
        Dyadic { mantissa: -self.mantissa, exponent }
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*2^{}", self.mantissa, self.exponent)
    }
}

impl fmt::Debug for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

impl FromStr for Dyadic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (m, e) = s
            .split_once("*2^")
            .ok_or_else(|| Error::InvalidInput(format!("bad dyadic {s:?}, want m*2^e")))?;
        let mantissa = BigInt::from_str(m.trim())
            .map_err(|e| Error::InvalidInput(format!("bad dyadic mantissa: {e}")))?;
        let exponent: i64 = e
            .trim()
            .parse()
            .map_err(|e| Error::InvalidInput(format!("bad dyadic exponent: {e}")))?;
        Ok(Dyadic::new(mantissa, exponent))
    }
}

impl Serialize for Dyadic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Dyadic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let d = Dyadic::new(BigInt::from(20), -10);
        assert_eq!(d.mantissa(), &BigInt::from(5));
        assert_eq!(d.exponent(), -8);
        let z = Dyadic::new(BigInt::zero(), 55);
        assert_eq!(z.exponent(), 0);
        assert!(z.is_zero());
    }

    #[test]
    fn round_trip_text() {
        for s in ["5*2^-8", "-3*2^4", "0*2^0", "1*2^0"] {
            let d: Dyadic = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
    }

    #[test]
    fn arithmetic_and_order() {
        let a = Dyadic::new(BigInt::from(1), -2); // 1/4
        let b = Dyadic::new(BigInt::from(1), -3); // 1/8
        assert_eq!((&a + &b).to_rational(), Rational::ratio(3, 8));
        assert_eq!((&a - &b).to_rational(), Rational::ratio(1, 8));
        assert!(a > b);
        assert_eq!((&a * &b).to_rational(), Rational::ratio(1, 32));
    }

    #[test]
    fn shifted_floors() {
        let d = Dyadic::new(BigInt::from(5), -3); // 5/8
        assert_eq!(d.floor_shifted(3), BigInt::from(5));
        assert_eq!(d.floor_shifted(2), BigInt::from(2));
        assert_eq!(d.ceil_shifted(2), BigInt::from(3));
        let n = Dyadic::new(BigInt::from(-5), -3);
        assert_eq!(n.floor_shifted(2), BigInt::from(-3));
        assert_eq!(n.ceil_shifted(2), BigInt::from(-2));
    }
}
