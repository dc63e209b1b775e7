//! Primitive integer directions for lines through the origin.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::rational::Rational;

/// A line through the origin, stored as a primitive integer vector with
/// canonical sign (first nonzero component positive). `norm_sq` is the exact
/// squared Euclidean norm of the components.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Direction {
    components: Vec<BigInt>,
    norm_sq: BigInt,
}

impl Serialize for Direction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let strings: Vec<String> = self.components.iter().map(|c| c.to_string()).collect();
        strings.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Direction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        let comps: std::result::Result<Vec<BigInt>, _> = strings
            .iter()
            .map(|s| s.parse::<BigInt>().map_err(serde::de::Error::custom))
            .collect();
        canonicalize_direction(&comps?).map_err(serde::de::Error::custom)
    }
}

/// Reduce an integer vector to its canonical primitive representative.
pub fn canonicalize_direction(raw: &[BigInt]) -> Result<Direction> {
    if raw.is_empty() || raw.iter().all(|c| c.is_zero()) {
        return Err(Error::InvalidDirection("zero vector".into()));
    }
    let mut g = BigInt::zero();
    for c in raw {
        g = g.gcd(c);
    }
    let mut components: Vec<BigInt> = raw.iter().map(|c| c / &g).collect();
    if components.iter().find(|c| !c.is_zero()).unwrap().is_negative() {
        for c in &mut components {
            *c = -&*c;
        }
    }
    let norm_sq = components.iter().map(|c| c * c).sum();
    Ok(Direction { components, norm_sq })
}

impl Direction {
    pub fn from_ints(raw: &[i64]) -> Result<Self> {
        let raw: Vec<BigInt> = raw.iter().map(|&v| BigInt::from(v)).collect();
        canonicalize_direction(&raw)
    }

    /// Coordinate axis `i` in dimension `d`.
    pub fn axis(i: usize, d: usize) -> Self {
        let mut v = vec![BigInt::zero(); d];
        v[i] = BigInt::from(1);
        Direction { components: v, norm_sq: BigInt::from(1) }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[BigInt] {
        &self.components
    }

    pub fn norm_sq(&self) -> &BigInt {
        &self.norm_sq
    }

    pub fn norm_sq_rational(&self) -> Rational {
        Rational::from_int(self.norm_sq.clone())
    }

    pub fn dot(&self, other: &Direction) -> BigInt {
        debug_assert_eq!(self.dim(), other.dim());
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Dot product with a dyadic point.
    pub fn dot_dyadic(&self, point: &[Dyadic]) -> Dyadic {
        let mut acc = Dyadic::zero();
        for (c, x) in self.components.iter().zip(point) {
            acc = &acc + &x.mul_int(c);
        }
        acc
    }
}

/// Scaled projection q_v(x) = v·x of a rational point onto the line spanned
/// by `v`. Metric length along the line is the scaled length divided by
/// sqrt(norm_sq); all predicates use the scaled coordinate only.
pub fn scaled_projection(v: &Direction, point: &[Rational]) -> Result<Rational> {
    if point.len() != v.dim() {
        return Err(Error::DimensionError { expected: v.dim(), got: point.len() });
    }
    let mut acc = Rational::zero();
    for (c, x) in v.components().iter().zip(point) {
        acc += &(&Rational::from_int(c.clone()) * x);
    }
    Ok(acc)
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gcd_reduction() {
        let d = Direction::from_ints(&[2, 4]).unwrap();
        assert_eq!(d.components(), &[BigInt::from(1), BigInt::from(2)]);
        assert_eq!(d.norm_sq(), &BigInt::from(5));
    }

    #[test]
    fn sign_canonicalization() {
        let d = Direction::from_ints(&[0, -3]).unwrap();
        assert_eq!(d.components(), &[BigInt::from(0), BigInt::from(1)]);
        assert_eq!(d.norm_sq(), &BigInt::from(1));
    }

    #[test]
    fn already_primitive() {
        let d = Direction::from_ints(&[6, 10, 15]).unwrap();
        assert_eq!(
            d.components(),
            &[BigInt::from(6), BigInt::from(10), BigInt::from(15)]
        );
        assert_eq!(d.norm_sq(), &BigInt::from(361));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(Direction::from_ints(&[0, 0]).is_err());
    }

    #[test]
    fn scaled_projection_examples() {
        let v = Direction::from_ints(&[1, 1]).unwrap();
        let p = vec![Rational::ratio(1, 2), Rational::ratio(1, 4)];
        assert_eq!(scaled_projection(&v, &p).unwrap(), Rational::ratio(3, 4));

        let v = Direction::from_ints(&[3, 4]).unwrap();
        let p = vec![Rational::one(), Rational::one()];
        assert_eq!(scaled_projection(&v, &p).unwrap(), Rational::from_int(7));

        let v = Direction::from_ints(&[1, 0]).unwrap();
        let p = vec![Rational::ratio(9, 7), Rational::ratio(2, 3)];
        assert_eq!(scaled_projection(&v, &p).unwrap(), Rational::ratio(9, 7));

        assert!(scaled_projection(&v, &[Rational::one()]).is_err());
    }
}
