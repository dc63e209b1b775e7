//! Exact integer linear algebra: fraction-free determinants, adjugates, and
//! small solves over the directions that bound a piece.
//!
//! Everything here is sized for d ≤ 8; the construction uses d = 2..4.

use num_bigint::BigInt;
use num_traits::Zero;

use crate::direction::Direction;
use crate::dyadic::Dyadic;
use crate::error::{Error, Result};
use crate::rational::Rational;

/// Fraction-free (Bareiss) determinant of a square integer matrix.
/// Consumes the matrix buffer.
pub fn bareiss_det(mut m: Vec<Vec<BigInt>>) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::from(1);
    }
    let mut sign = 1i32;
    let mut prev = BigInt::from(1);
    for k in 0..n - 1 {
        if m[k][k].is_zero() {
            let Some(p) = (k + 1..n).find(|&r| !m[r][k].is_zero()) else {
                return BigInt::zero();
            };
            m.swap(k, p);
            sign = -sign;
        }
        for i in k + 1..n {
            for j in k + 1..n {
                let num = &m[i][j] * &m[k][k] - &m[i][k] * &m[k][j];
                // exact division is an invariant of the Bareiss recurrence
                m[i][j] = num / &prev;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let det = m[n - 1][n - 1].clone();
    if sign < 0 {
        -det
    } else {
        det
    }
}

fn minor(rows: &[Vec<BigInt>], skip_r: usize, skip_c: usize) -> Vec<Vec<BigInt>> {
    rows.iter()
        .enumerate()
        .filter(|(r, _)| *r != skip_r)
        .map(|(_, row)| {
            row.iter()
                .enumerate()
                .filter(|(c, _)| *c != skip_c)
                .map(|(_, v)| v.clone())
                .collect()
        })
        .collect()
}

/// A basis of d independent directions together with its determinant and
/// adjugate, so that `A^{-1} = adjugate / det` exactly.
#[derive(Clone, Debug)]
pub struct SolvedBasis {
    /// Row i = direction i's components.
    rows: Vec<Vec<BigInt>>,
    /// adj[i][j] is the (i,j) entry of the adjugate of A (A · adj = det·I).
    adj: Vec<Vec<BigInt>>,
    det: BigInt,
}

impl SolvedBasis {
    /// Build from slab directions; errors if they are linearly dependent.
    pub fn new(directions: &[&Direction]) -> Result<Self> {
        let d = directions.len();
        for dir in directions {
            if dir.dim() != d {
                return Err(Error::DimensionError { expected: d, got: dir.dim() });
            }
        }
        let rows: Vec<Vec<BigInt>> = directions.iter().map(|v| v.components().to_vec()).collect();
        let det = bareiss_det(rows.clone());
        if det.is_zero() {
            return Err(Error::DegeneratePiece);
        }
        // adj(A)[i][j] = (-1)^{i+j} · minor_{j,i}(A)
        let mut adj = vec![vec![BigInt::zero(); d]; d];
        for i in 0..d {
            for j in 0..d {
                let m = minor(&rows, j, i);
                let c = bareiss_det(m);
                adj[i][j] = if (i + j) % 2 == 0 { c } else { -c };
            }
        }
        Ok(SolvedBasis { rows, adj, det })
    }

    pub fn det(&self) -> &BigInt {
        &self.det
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    /// Solve A·x = c for a dyadic right-hand side; the solution is rational.
    pub fn solve_dyadic(&self, rhs: &[Dyadic]) -> Vec<Rational> {
        let d = self.dim();
        let det = Rational::from_int(self.det.clone());
        (0..d)
            .map(|i| {
                let mut acc = Dyadic::zero();
                for (j, c) in rhs.iter().enumerate() {
                    acc = &acc + &c.mul_int(&self.adj[i][j]);
                }
                &acc.to_rational() / &det
            })
            .collect()
    }

    /// The coefficients of the linear functional x ↦ v·x expressed in slab
    /// coordinates, scaled by det: `v·x = Σ_j coeff_j · (row_j · x) / det`.
    ///
    /// In other words coeff = vᵀ·adj, so that the range of v over a piece is
    /// recovered from the per-slab intervals without enumerating vertices.
    pub fn functional_coeffs(&self, v: &Direction) -> Vec<BigInt> {
        let d = self.dim();
        (0..d)
            .map(|j| {
                let mut acc = BigInt::zero();
                for (i, c) in v.components().iter().enumerate() {
                    acc += c * &self.adj[i][j];
                }
                acc
            })
            .collect()
    }

    /// Column j of det·A^{-1} (the edge vector dual to slab j, as integers).
    pub fn dual_column(&self, j: usize) -> Vec<BigInt> {
        (0..self.dim()).map(|i| self.adj[i][j].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> Vec<Vec<BigInt>> {
        rows.iter()
            .map(|r| r.iter().map(|&v| BigInt::from(v)).collect())
            .collect()
    }

    #[test]
    fn determinants() {
        assert_eq!(bareiss_det(m(&[&[1, 2], &[3, 4]])), BigInt::from(-2));
        assert_eq!(bareiss_det(m(&[&[2, 0, 1], &[1, 1, 0], &[0, 3, 5]])), BigInt::from(13));
        assert_eq!(bareiss_det(m(&[&[1, 2], &[2, 4]])), BigInt::zero());
        assert_eq!(
            bareiss_det(m(&[&[0, 1, 0], &[1, 0, 0], &[0, 0, 1]])),
            BigInt::from(-1)
        );
    }

    #[test]
    fn solve_small_system() {
        let a = Direction::from_ints(&[1, 0]).unwrap();
        let b = Direction::from_ints(&[1, 1]).unwrap();
        let basis = SolvedBasis::new(&[&a, &b]).unwrap();
        // x = 1/4, x + y = 1/2  =>  y = 1/4
        let rhs = vec![Dyadic::new(BigInt::from(1), -2), Dyadic::new(BigInt::from(1), -1)];
        let x = basis.solve_dyadic(&rhs);
        assert_eq!(x, vec![Rational::ratio(1, 4), Rational::ratio(1, 4)]);
    }

    #[test]
    fn dependent_directions_rejected() {
        let a = Direction::from_ints(&[1, 0]).unwrap();
        let b = Direction::from_ints(&[2, 0]);
        // canonicalization already collapses (2,0) to (1,0)
        let b = b.unwrap();
        assert!(matches!(
            SolvedBasis::new(&[&a, &b]),
            Err(Error::DegeneratePiece)
        ));
    }

    #[test]
    fn functional_coeffs_recover_projection() {
        let a = Direction::from_ints(&[1, 0]).unwrap();
        let b = Direction::from_ints(&[1, 1]).unwrap();
        let basis = SolvedBasis::new(&[&a, &b]).unwrap();
        let v = Direction::from_ints(&[0, 1]).unwrap();
        // v·x = (coeff_0·(a·x) + coeff_1·(b·x))/det with det = 1
        let coeffs = basis.functional_coeffs(&v);
        // a·x = x, b·x = x+y, y = -1·x + 1·(x+y)
        assert_eq!(coeffs, vec![BigInt::from(-1), BigInt::from(1)]);
    }
}
