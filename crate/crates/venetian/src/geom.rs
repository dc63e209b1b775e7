//! Slabs and pieces: the parallelepipeds of the construction.
//!
//! A piece is the intersection of exactly d slabs with linearly independent
//! directions. Its vertices solve the d×d systems v_i·x = c_i with
//! c_i ∈ {lo_i, hi_i}; the range of any linear functional over the piece is
//! attained at vertices and is computed here in closed form from the slab
//! intervals, which the vertex route must reproduce exactly.

use num_bigint::BigInt;
use num_traits::Signed;
use serde::{Deserialize, Serialize};

use crate::direction::Direction;
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::linalg::SolvedBasis;
use crate::rational::Rational;

/// Preimage of an interval under the scaled projection x ↦ direction·x.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Slab {
    pub direction: Direction,
    pub lo: Dyadic,
    pub hi: Dyadic,
}

impl Slab {
    pub fn new(direction: Direction, lo: Dyadic, hi: Dyadic) -> Result<Self> {
        if lo >= hi {
            return Err(Error::InvalidInput(format!(
                "slab interval [{lo}, {hi}] is empty"
            )));
        }
        Ok(Slab { direction, lo, hi })
    }

    pub fn width(&self) -> Dyadic {
        &self.hi - &self.lo
    }

    /// Exact membership of a rational point in the slab (closed).
    pub fn contains(&self, point: &[Rational]) -> Result<bool> {
        let v = crate::direction::scaled_projection(&self.direction, point)?;
        Ok(v >= self.lo.to_rational() && v <= self.hi.to_rational())
    }
}

/// A closed parallelepiped carried through the construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Piece {
    pub stage: u32,
    pub parent_id: u64,
    pub global_id: u64,
    pub mass: Rational,
    pub slabs: Vec<Slab>,
}

impl Piece {
    /// Validates the piece invariants: d slabs in dimension d with
    /// independent directions.
    pub fn new(
        stage: u32,
        parent_id: u64,
        global_id: u64,
        mass: Rational,
        slabs: Vec<Slab>,
    ) -> Result<Self> {
        let piece = Piece { stage, parent_id, global_id, mass, slabs };
        piece.basis()?;
        Ok(piece)
    }

    pub fn dim(&self) -> usize {
        self.slabs.len()
    }

    pub fn basis(&self) -> Result<SolvedBasis> {
        let dirs: Vec<&Direction> = self.slabs.iter().map(|s| &s.direction).collect();
        if dirs.is_empty() || dirs[0].dim() != dirs.len() {
            return Err(Error::DimensionError {
                expected: dirs.len(),
                got: dirs.first().map(|d| d.dim()).unwrap_or(0),
            });
        }
        SolvedBasis::new(&dirs)
    }
}

/// All 2^d vertices of the piece, ordered by the corner bit pattern
/// (bit j set means slab j contributes its upper endpoint).
pub fn piece_vertices(piece: &Piece) -> Result<Vec<Vec<Rational>>> {
    let d = piece.dim();
    let basis = piece.basis()?;
    let mut out = Vec::with_capacity(1 << d);
    for bits in 0..(1u32 << d) {
        let rhs: Vec<Dyadic> = piece
            .slabs
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if bits >> j & 1 == 1 {
                    s.hi.clone()
                } else {
                    s.lo.clone()
                }
            })
            .collect();
        out.push(basis.solve_dyadic(&rhs));
    }
    Ok(out)
}

/// Exact [min, max] of v·x over the piece (equals the min/max over
/// `piece_vertices`, computed without enumerating them).
pub fn projection_range(piece: &Piece, v: &Direction) -> Result<(Rational, Rational)> {
    if v.dim() != piece.dim() {
        return Err(Error::DimensionError { expected: piece.dim(), got: v.dim() });
    }
    let basis = piece.basis()?;
    let coeffs = basis.functional_coeffs(v);
    let (mn, mx) = range_from_coeffs(
        &coeffs,
        &piece.slabs.iter().map(|s| (s.lo.clone(), s.hi.clone())).collect::<Vec<_>>(),
    );
    let det = Rational::from_int(basis.det().clone());
    let (a, b) = (&mn.to_rational() / &det, &mx.to_rational() / &det);
    if basis.det().is_negative() {
        Ok((b, a))
    } else {
        Ok((a, b))
    }
}

/// Σ_j min/max(c_j·lo_j, c_j·hi_j) as exact dyadics (the det-scaled range of
/// the functional with slab coefficients `coeffs`).
pub fn range_from_coeffs(coeffs: &[BigInt], intervals: &[(Dyadic, Dyadic)]) -> (Dyadic, Dyadic) {
    let mut mn = Dyadic::zero();
    let mut mx = Dyadic::zero();
    for (c, (lo, hi)) in coeffs.iter().zip(intervals) {
        let a = lo.mul_int(c);
        let b = hi.mul_int(c);
        if a <= b {
            mn = &mn + &a;
            mx = &mx + &b;
        } else {
            mn = &mn + &b;
            mx = &mx + &a;
        }
    }
    (mn, mx)
}

/// Exact containment of `inner` in `outer`: every vertex of `inner`
/// satisfies every slab constraint of `outer`.
pub fn piece_contained_in(inner: &Piece, outer: &Piece) -> Result<bool> {
    let verts = piece_vertices(inner)?;
    for v in &verts {
        for slab in &outer.slabs {
            if !slab.contains(v)? {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Squared lengths of the d edge classes of the piece (each parallelepiped
/// edge is a dual-basis column scaled by the slab width).
pub fn edge_length_sq_multiset(piece: &Piece) -> Result<Vec<Rational>> {
    let basis = piece.basis()?;
    let det_sq = {
        let d = Rational::from_int(basis.det().clone());
        &d * &d
    };
    let mut out: Vec<Rational> = (0..piece.dim())
        .map(|j| {
            let col = basis.dual_column(j);
            let w = piece.slabs[j].width().to_rational();
            let mut norm = Rational::zero();
            for c in &col {
                let cr = Rational::from_int(c.clone());
                norm += &(&cr * &cr);
            }
            &(&(&w * &w) * &norm) / &det_sq
        })
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Piece {
        let x = Direction::from_ints(&[1, 0]).unwrap();
        let y = Direction::from_ints(&[0, 1]).unwrap();
        Piece::new(
            0,
            0,
            0,
            Rational::one(),
            vec![
                Slab::new(x, Dyadic::zero(), Dyadic::one()).unwrap(),
                Slab::new(y, Dyadic::zero(), Dyadic::one()).unwrap(),
            ],
        )
        .unwrap()
    }

    fn rp(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    #[test]
    fn unit_square_vertices() {
        let verts = piece_vertices(&unit_square()).unwrap();
        let mut got: Vec<(Rational, Rational)> =
            verts.into_iter().map(|v| (v[0].clone(), v[1].clone())).collect();
        got.sort();
        let mut want = vec![
            (rp(0, 1), rp(0, 1)),
            (rp(0, 1), rp(1, 1)),
            (rp(1, 1), rp(0, 1)),
            (rp(1, 1), rp(1, 1)),
        ];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn sheared_vertices() {
        // slabs x ∈ [0,1], x+y ∈ [0,1/2] -> {(0,0),(0,1/2),(1,-1),(1,-1/2)}
        let x = Direction::from_ints(&[1, 0]).unwrap();
        let diag = Direction::from_ints(&[1, 1]).unwrap();
        let p = Piece::new(
            0,
            0,
            0,
            Rational::one(),
            vec![
                Slab::new(x, Dyadic::zero(), Dyadic::one()).unwrap(),
                Slab::new(diag, Dyadic::zero(), Dyadic::pow2(-1)).unwrap(),
            ],
        )
        .unwrap();
        let mut got: Vec<(Rational, Rational)> = piece_vertices(&p)
            .unwrap()
            .into_iter()
            .map(|v| (v[0].clone(), v[1].clone()))
            .collect();
        got.sort();
        let mut want = vec![
            (rp(0, 1), rp(0, 1)),
            (rp(0, 1), rp(1, 2)),
            (rp(1, 1), rp(-1, 1)),
            (rp(1, 1), rp(-1, 2)),
        ];
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn dependent_slabs_rejected() {
        let x = Direction::from_ints(&[1, 0]).unwrap();
        // 2x scaled back to x by canonicalization; dependence remains
        let x2 = Direction::from_ints(&[2, 0]).unwrap();
        let r = Piece::new(
            0,
            0,
            0,
            Rational::one(),
            vec![
                Slab::new(x, Dyadic::zero(), Dyadic::one()).unwrap(),
                Slab::new(x2, Dyadic::zero(), Dyadic::one()).unwrap(),
            ],
        );
        assert!(matches!(r, Err(Error::DegeneratePiece)));
    }

    #[test]
    fn projection_range_examples() {
        let sq = unit_square();
        let diag = Direction::from_ints(&[1, 1]).unwrap();
        assert_eq!(
            projection_range(&sq, &diag).unwrap(),
            (Rational::zero(), Rational::from_int(2))
        );
        let x = Direction::from_ints(&[1, 0]).unwrap();
        assert_eq!(
            projection_range(&sq, &x).unwrap(),
            (Rational::zero(), Rational::one())
        );

        // parallelogram {x∈[0,1], x+y∈[0,1/2]} onto (0,1) -> [-1, 1/2]
        let p = Piece::new(
            0,
            0,
            0,
            Rational::one(),
            vec![
                Slab::new(x, Dyadic::zero(), Dyadic::one()).unwrap(),
                Slab::new(diag, Dyadic::zero(), Dyadic::pow2(-1)).unwrap(),
            ],
        )
        .unwrap();
        let y = Direction::from_ints(&[0, 1]).unwrap();
        assert_eq!(
            projection_range(&p, &y).unwrap(),
            (rp(-1, 1), rp(1, 2))
        );
    }

    #[test]
    fn range_matches_own_slab_interval() {
        let x = Direction::from_ints(&[2, 1]).unwrap();
        let diag = Direction::from_ints(&[1, 3]).unwrap();
        let p = Piece::new(
            0,
            0,
            0,
            Rational::one(),
            vec![
                Slab::new(x.clone(), Dyadic::pow2(-3), Dyadic::pow2(-1)).unwrap(),
                Slab::new(diag.clone(), Dyadic::zero(), Dyadic::pow2(-2)).unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(
            projection_range(&p, &x).unwrap(),
            (Rational::pow2(-3), Rational::pow2(-1))
        );
        assert_eq!(
            projection_range(&p, &diag).unwrap(),
            (Rational::zero(), Rational::pow2(-2))
        );
    }

    #[test]
    fn edge_multiset_congruence() {
        let sq = unit_square();
        let e = edge_length_sq_multiset(&sq).unwrap();
        assert_eq!(e, vec![Rational::one(), Rational::one()]);
    }
}
