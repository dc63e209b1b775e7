//! Affine k-plane families and the dual hyperplane application.
//!
//! Planes are encoded as P(Y, y₀) = {(x, y₀ + Y·x)} with exact rational
//! entries. Families built from construction stages take one representative
//! point per piece (its lexicographically smallest vertex) and are verified
//! pairwise disjoint and non-parallel in exact arithmetic.

use serde::{Deserialize, Serialize};

use crate::construction::Stage;
use crate::direction::Direction;
use crate::error::{Error, Result};
use crate::geom::piece_vertices;
use crate::rational::Rational;

/// h(k, s): the two-branch dimension formula for unions of k-plane families.
pub fn h_function(k: u64, s: &Rational) -> Result<Rational> {
    if s.is_negative() {
        return Err(Error::InvalidInput(format!("s = {s} is negative")));
    }
    let k1 = Rational::from_int(k as i64 + 1);
    let kq = Rational::from_int(k as i64);
    let m = Rational::from_int((s / &k1).ceil_int());
    let threshold = &(&kq + s) / &k1;
    if m >= threshold {
        // s − k·⌈s/(k+1)⌉ + 2k
        Ok(&(s - &(&kq * &m)) + &Rational::from_int(2 * k as i64))
    } else {
        // k + ⌈s/(k+1)⌉
        Ok(&kq + &m)
    }
}

/// A k-plane in ℝ^d: P(Y, y₀) = {(x, y₀ + Y·x) : x ∈ ℝ^k}, Y ∈ ℚ^{(d−k)×k}.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KPlane {
    pub d: usize,
    pub k: usize,
    /// (d−k) rows × k columns
    pub y: Vec<Vec<Rational>>,
    pub y0: Vec<Rational>,
}

impl KPlane {
    pub fn new(d: usize, k: usize, y: Vec<Vec<Rational>>, y0: Vec<Rational>) -> Result<Self> {
        if k < 1 || d <= k {
            return Err(Error::InvalidInput(format!("need d > k ≥ 1, got d={d}, k={k}")));
        }
        if y.len() != d - k || y.iter().any(|r| r.len() != k) || y0.len() != d - k {
            return Err(Error::DimensionError { expected: d - k, got: y.len() });
        }
        Ok(KPlane { d, k, y, y0 })
    }
}

/// Exact membership test for P(Y, y₀).
pub fn plane_contains(p: &KPlane, point: &[Rational]) -> Result<bool> {
    if point.len() != p.d {
        return Err(Error::DimensionError { expected: p.d, got: point.len() });
    }
    let (x, yv) = point.split_at(p.k);
    for (row, (yrow, y0)) in p.y.iter().zip(&p.y0).enumerate() {
        let mut acc = y0.clone();
        for (c, xi) in yrow.iter().zip(x) {
            acc += &(c * xi);
        }
        if &acc != &yv[row] {
            return Ok(false);
        }
    }
    Ok(true)
}

fn same_shape(p: &KPlane, q: &KPlane) -> Result<()> {
    if p.d != q.d || p.k != q.k {
        return Err(Error::DimensionError { expected: p.d, got: q.d });
    }
    Ok(())
}

/// True iff the planes are disjoint: the system (Y−Y')x = y₀'−y₀ has no
/// solution (exact rank comparison of coefficient and augmented matrices).
pub fn verify_disjoint(p: &KPlane, q: &KPlane) -> Result<bool> {
    same_shape(p, q)?;
    let rows = p.d - p.k;
    let cols = p.k;
    let mut coef: Vec<Vec<Rational>> = Vec::with_capacity(rows);
    let mut aug: Vec<Vec<Rational>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let crow: Vec<Rational> = (0..cols).map(|c| &p.y[r][c] - &q.y[r][c]).collect();
        let mut arow = crow.clone();
        arow.push(&q.y0[r] - &p.y0[r]);
        coef.push(crow);
        aug.push(arow);
    }
    Ok(rank_rational(&aug) > rank_rational(&coef))
}

/// True iff the direction spaces differ, i.e. Y ≠ Y'.
pub fn verify_nonparallel(p: &KPlane, q: &KPlane) -> Result<bool> {
    same_shape(p, q)?;
    Ok(p.y != q.y)
}

fn rank_rational(rows: &[Vec<Rational>]) -> usize {
    let mut m: Vec<Vec<Rational>> = rows.to_vec();
    let nrows = m.len();
    let ncols = if nrows == 0 { 0 } else { m[0].len() };
    let mut rank = 0;
    for col in 0..ncols {
        let Some(p) = (rank..nrows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        for r in 0..nrows {
            if r != rank && !m[r][col].is_zero() {
                let f = &m[r][col] / &m[rank][col];
                for c in col..ncols {
                    let sub = &f * &m[rank][c];
                    m[r][c] = &m[r][c] - &sub;
                }
            }
        }
        rank += 1;
        if rank == nrows {
            break;
        }
    }
    rank
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub pairs_checked: u64,
    pub disjoint_failures: u64,
    pub parallel_failures: u64,
    pub first_witness: Option<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaneFamily {
    pub d: usize,
    pub k: usize,
    pub provenance: String,
    /// case index m = ⌈s/(k+1)⌉ for dimension families
    pub case_m: Option<u64>,
    pub planes: Vec<KPlane>,
    pub report: VerificationReport,
}

/// All-pairs exact verification.
pub fn verify_family(planes: &[KPlane]) -> Result<VerificationReport> {
    let mut report = VerificationReport {
        pairs_checked: 0,
        disjoint_failures: 0,
        parallel_failures: 0,
        first_witness: None,
    };
    for i in 0..planes.len() {
        for j in i + 1..planes.len() {
            report.pairs_checked += 1;
            let dj = verify_disjoint(&planes[i], &planes[j])?;
            let np = verify_nonparallel(&planes[i], &planes[j])?;
            if !dj {
                report.disjoint_failures += 1;
            }
            if !np {
                report.parallel_failures += 1;
            }
            if (!dj || !np) && report.first_witness.is_none() {
                report.first_witness = Some((i, j));
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Representatives of a stage
// ---------------------------------------------------------------------------

/// Lexicographically smallest vertex of each of `sample` deterministically
/// chosen pieces (evenly spaced in piece order).
pub fn representatives(stage: &Stage, sample: usize) -> Result<Vec<Vec<Rational>>> {
    let count = stage.pieces.len();
    if count == 0 {
        return Err(Error::EmptyStage);
    }
    let sample = sample.min(count).max(1);
    let mut out = Vec::with_capacity(sample);
    for i in 0..sample {
        let idx = i * count / sample;
        let piece = stage.piece(idx);
        let verts = piece_vertices(&piece)?;
        let rep = verts.into_iter().min().expect("nonempty vertex set");
        out.push(rep);
    }
    Ok(out)
}

/// Pairwise distinctness of representative values in the given coordinates.
pub fn check_coordinate_distinct(reps: &[Vec<Rational>], coords: &[usize]) -> Result<()> {
    for &c in coords {
        let mut vals: Vec<&Rational> = reps.iter().map(|r| &r[c]).collect();
        vals.sort();
        if vals.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SampleNotInjective { coord: c });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Families from stages
// ---------------------------------------------------------------------------

/// Disjoint non-parallel k-planes in ℝ^d whose union lies in ℝ^{d-1} × C for
/// a thin set C: representatives (t, f₁, f₂) ∈ ℝ^D, D = (k+1)(d−1−k)+1, give
/// Y = [f₁(t); 0-row], y₀ = [f₂(t); t].
pub fn measure_zero_family(
    stage: &Stage,
    d: usize,
    k: usize,
    family_size: usize,
) -> Result<PlaneFamily> {
    if d < k + 2 {
        return Err(Error::InvalidInput(format!("need d ≥ k+2, got d={d}, k={k}")));
    }
    let dd = (k + 1) * (d - 1 - k) + 1;
    if stage.dim() != dd {
        return Err(Error::ConfigMismatch(format!(
            "stage dimension {} ≠ (k+1)(d−1−k)+1 = {dd}",
            stage.dim()
        )));
    }
    let reps = representatives(stage, family_size)?;
    let coords: Vec<usize> = (0..dd).collect();
    check_coordinate_distinct(&reps, &coords)?;

    let rows_f1 = d - 1 - k;
    let planes: Vec<KPlane> = reps
        .iter()
        .map(|rep| {
            let t = rep[0].clone();
            let mut y: Vec<Vec<Rational>> = Vec::with_capacity(d - k);
            let mut pos = 1;
            for _ in 0..rows_f1 {
                let row: Vec<Rational> = rep[pos..pos + k].to_vec();
                pos += k;
                y.push(row);
            }
            y.push(vec![Rational::zero(); k]);
            let mut y0: Vec<Rational> = rep[pos..pos + rows_f1].to_vec();
            y0.push(t);
            KPlane::new(d, k, y, y0)
        })
        .collect::<Result<_>>()?;

    let report = verify_family(&planes)?;
    Ok(PlaneFamily {
        d,
        k,
        provenance: format!("measure_zero d={d} k={k} from stage {}", stage.k),
        case_m: None,
        planes,
        report,
    })
}

/// Dimension-bounded families: case analysis on m = ⌈s/(k+1)⌉.
pub fn dimension_family(
    d: usize,
    k: usize,
    s: &Rational,
    stage: &Stage,
    family_size: usize,
) -> Result<PlaneFamily> {
    if d < k + 2 {
        return Err(Error::InvalidInput(format!("need d ≥ k+2, got d={d}, k={k}")));
    }
    let max_s = Rational::from_int(((k + 1) * (d - k)) as i64);
    if s.is_negative() || s > &max_s {
        return Err(Error::InvalidInput(format!("s = {s} outside [0, {max_s}]")));
    }
    let k1 = Rational::from_int(k as i64 + 1);
    let m_int = (s / &k1).ceil_int();
    let m = u64::try_from(m_int.clone()).map_err(|_| Error::InvalidInput("bad m".into()))?;
    let threshold = &(&Rational::from_int(k as i64) + s) / &k1;
    let m_rat = Rational::from_int(m_int);

    if m == 0 {
        // s = 0: one plane suffices
        let y = vec![vec![Rational::zero(); k]; d - k];
        let y0 = vec![Rational::zero(); d - k];
        let planes = vec![KPlane::new(d, k, y, y0)?];
        let report = verify_family(&planes)?;
        return Ok(PlaneFamily {
            d,
            k,
            provenance: format!("dimension s={s} (single plane)"),
            case_m: Some(0),
            planes,
            report,
        });
    }

    if m == 1 && m_rat >= threshold {
        // explicit slice family: Y₁₁ = t, zero elsewhere, y₀ = (0,…,0,t)
        let reps = representatives(stage, family_size)?;
        check_coordinate_distinct(&reps, &[0])?;
        let planes: Vec<KPlane> = reps
            .iter()
            .map(|rep| {
                let t = rep[0].clone();
                let mut y = vec![vec![Rational::zero(); k]; d - k];
                y[0][0] = t.clone();
                // zero last row guarantees the slice structure
                y[d - k - 1] = vec![Rational::zero(); k];
                let mut y0 = vec![Rational::zero(); d - k];
                y0[d - k - 1] = t;
                KPlane::new(d, k, y, y0)
            })
            .collect::<Result<_>>()?;
        let report = verify_family(&planes)?;
        return Ok(PlaneFamily {
            d,
            k,
            provenance: format!("dimension s={s} m=1 slice family from stage {}", stage.k),
            case_m: Some(1),
            planes,
            report,
        });
    }

    // template cases: effective block count m' = m (m ≥ threshold) or m+1
    let m_eff = if m_rat >= threshold { m } else { m + 1 };
    let rows_f1 = (m_eff - 1) as usize;
    if d - k < m_eff as usize {
        return Err(Error::ConfigMismatch(format!(
            "d−k = {} too small for block count m' = {m_eff}",
            d - k
        )));
    }
    let dd = (k + 1) * rows_f1 + 1;
    if stage.dim() != dd {
        return Err(Error::ConfigMismatch(format!(
            "stage dimension {} ≠ (k+1)(m'−1)+1 = {dd}",
            stage.dim()
        )));
    }
    let reps = representatives(stage, family_size)?;
    // the slice coordinate t and the Y₁₁ source feed disjointness and
    // non-parallelism; both must be injective over the sample
    check_coordinate_distinct(&reps, &[0, 1])?;
    let planes: Vec<KPlane> = reps
        .iter()
        .map(|rep| {
            let t = rep[0].clone();
            let mut y: Vec<Vec<Rational>> = Vec::with_capacity(d - k);
            let mut pos = 1;
            for _ in 0..rows_f1 {
                y.push(rep[pos..pos + k].to_vec());
                pos += k;
            }
            while y.len() < d - k {
                y.push(vec![Rational::zero(); k]);
            }
            let mut y0 = vec![Rational::zero(); d - k];
            for (r, y0r) in y0.iter_mut().enumerate().take(rows_f1) {
                *y0r = rep[pos + r].clone();
            }
            y0[rows_f1] = t; // slice coordinate y₀^{m'}
            KPlane::new(d, k, y, y0)
        })
        .collect::<Result<_>>()?;
    let report = verify_family(&planes)?;
    Ok(PlaneFamily {
        d,
        k,
        provenance: format!(
            "dimension s={s} block template m'={m_eff} from stage {}",
            stage.k
        ),
        case_m: Some(m),
        planes,
        report,
    })
}

// ---------------------------------------------------------------------------
// Dual hyperplanes
// ---------------------------------------------------------------------------

/// Nonvertical hyperplane y = a·x + b.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hyperplane {
    pub a: Vec<Rational>,
    pub b: Rational,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerticalSection {
    /// index into the vertical list
    pub vertical: usize,
    /// the line direction (x_i, 1) in canonical integer form
    pub direction: Direction,
    /// projection intervals of the deepest-stage pieces onto the direction
    pub intervals: Vec<(Rational, Rational)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualFamily {
    pub hyperplanes: Vec<Hyperplane>,
    pub sections: Vec<VerticalSection>,
}

/// Integer direction (x_i, 1) of the line dual to the vertical at x_i.
pub fn vertical_direction(x: &[Rational]) -> Result<Direction> {
    let mut den = num_bigint::BigInt::from(1);
    for c in x {
        den = num_integer::Integer::lcm(&den, c.denom());
    }
    let mut comps: Vec<num_bigint::BigInt> =
        x.iter().map(|c| c.numer() * (&den / c.denom())).collect();
    comps.push(den);
    crate::direction::canonicalize_direction(&comps)
}

/// Hyperplanes P_{a,b} from the deepest-stage representatives, plus the
/// per-vertical section interval lists q(piece) on the dual directions.
pub fn dual_hyperplanes(
    stage: &Stage,
    verticals: &[Vec<Rational>],
    user_directions: &[Direction],
    family_size: usize,
) -> Result<DualFamily> {
    let d = stage.dim();
    for x in verticals {
        if x.len() != d - 1 {
            return Err(Error::DimensionError { expected: d - 1, got: x.len() });
        }
    }
    let dirs: Vec<Direction> =
        verticals.iter().map(|x| vertical_direction(x)).collect::<Result<_>>()?;
    for dir in &dirs {
        if !user_directions.iter().any(|u| u == dir) {
            return Err(Error::LineNotInSchedule(dir.to_string()));
        }
    }
    let reps = representatives(stage, family_size)?;
    let hyperplanes: Vec<Hyperplane> = reps
        .iter()
        .map(|rep| Hyperplane { a: rep[..d - 1].to_vec(), b: rep[d - 1].clone() })
        .collect();
    let sections: Vec<VerticalSection> = dirs
        .iter()
        .enumerate()
        .map(|(vi, dir)| {
            let intervals: Vec<(Rational, Rational)> = (0..stage.pieces.len())
                .map(|i| stage.piece_range(i, dir))
                .collect();
            VerticalSection { vertical: vi, direction: dir.clone(), intervals }
        })
        .collect();
    Ok(DualFamily { hyperplanes, sections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construction::{build_stage, BuildLimits};
    use crate::schedule::build_schedule;

    fn rq(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    #[test]
    fn h_function_table() {
        // frozen hand-derived values
        let cases: &[(u64, i64, i64)] = &[
            (1, 0, 1),
            (1, 1, 2),
            (1, 2, 2),
            (1, 3, 3),
            (2, 2, 3),
            (2, 5, 4),
        ];
        for &(k, s, want) in cases {
            let h = h_function(k, &Rational::from_int(s)).unwrap();
            assert_eq!(h, Rational::from_int(want), "h({k},{s})");
        }
        assert!(h_function(1, &rq(-1, 2)).is_err());
    }

    #[test]
    fn h_function_branch_consistency() {
        // boundary inputs s = j(k+1): both branches agree
        for k in 1..=4u64 {
            for j in 0..=k as i64 {
                let s = Rational::from_int(j * (k as i64 + 1));
                let k1 = Rational::from_int(k as i64 + 1);
                let m = Rational::from_int((&s / &k1).ceil_int());
                let first = &(&s - &(&Rational::from_int(k as i64) * &m))
                    + &Rational::from_int(2 * k as i64);
                let second = &Rational::from_int(k as i64) + &m;
                let thr = &(&Rational::from_int(k as i64) + &s) / &k1;
                if m == thr {
                    assert_eq!(first, second, "branch mismatch at k={k}, s={s}");
                }
                let _ = h_function(k, &s).unwrap();
            }
        }
    }

    fn plane(d: usize, k: usize, y: &[&[(i64, i64)]], y0: &[(i64, i64)]) -> KPlane {
        KPlane::new(
            d,
            k,
            y.iter()
                .map(|row| row.iter().map(|&(n, dd)| rq(n, dd)).collect())
                .collect(),
            y0.iter().map(|&(n, dd)| rq(n, dd)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn plane_contains_examples() {
        let p = plane(3, 1, &[&[(1, 1)], &[(2, 1)]], &[(1, 2), (0, 1)]);
        // x = 0 -> contains (0, y0)
        assert!(plane_contains(&p, &[rq(0, 1), rq(1, 2), rq(0, 1)]).unwrap());
        // off-plane point
        assert!(!plane_contains(&p, &[rq(0, 1), rq(3, 2), rq(0, 1)]).unwrap());
        // Y = 0 slice plane contains (x, y0) for all x
        let s = plane(3, 1, &[&[(0, 1)], &[(0, 1)]], &[(1, 3), (2, 3)]);
        for x in [-5i64, 0, 7] {
            assert!(plane_contains(&s, &[rq(x, 1), rq(1, 3), rq(2, 3)]).unwrap());
        }
        assert!(plane_contains(&p, &[rq(0, 1)]).is_err());
    }

    #[test]
    fn disjoint_and_parallel_checks() {
        // parallel distinct
        let p = plane(3, 1, &[&[(1, 1)], &[(0, 1)]], &[(0, 1), (0, 1)]);
        let q = plane(3, 1, &[&[(1, 1)], &[(0, 1)]], &[(1, 1), (0, 1)]);
        assert!(verify_disjoint(&p, &q).unwrap());
        assert!(!verify_nonparallel(&p, &q).unwrap());

        // identical planes
        assert!(!verify_disjoint(&p, &p).unwrap());

        // d=3, k=1: Y=(1,0)ᵀ, Y'=(0,0)ᵀ, y0=(0,0), y0'=(1,0): intersect at x=1
        let a = plane(3, 1, &[&[(1, 1)], &[(0, 1)]], &[(0, 1), (0, 1)]);
        let b = plane(3, 1, &[&[(0, 1)], &[(0, 1)]], &[(1, 1), (0, 1)]);
        assert!(!verify_disjoint(&a, &b).unwrap());
        assert!(verify_nonparallel(&a, &b).unwrap());

        // differ only in a non-(1,1) entry: still nonparallel
        let c = plane(3, 1, &[&[(1, 1)], &[(1, 1)]], &[(0, 1), (0, 1)]);
        assert!(verify_nonparallel(&a, &c).unwrap());
    }

    /// A synthetic stage in dimension `dim` whose pieces are tiny boxes along
    /// the main diagonal (all coordinates distinct across pieces).
    fn synthetic_stage(dim: usize, count: usize) -> Stage {
        use crate::construction::{PieceData, StageFrame};
        use crate::dyadic::Dyadic;
        let dirs: Vec<Direction> = (0..dim).map(|i| Direction::axis(i, dim)).collect();
        let widths = vec![Dyadic::pow2(-20); dim];
        let frame = StageFrame::new(dirs, widths, vec![20; dim]).unwrap();
        let pieces: Vec<PieceData> = (0..count)
            .map(|i| PieceData {
                lo: (0..dim)
                    .map(|c| {
                        Dyadic::new(
                            num_bigint::BigInt::from((i * dim + c + 1) as i64),
                            -10,
                        )
                    })
                    .collect::<Vec<_>>()
                    .into_boxed_slice(),
                parent: 0,
                j: 1,
                mass_idx: 0,
            })
            .collect();
        Stage {
            k: 9,
            n: 20,
            a: 5,
            line_tag: crate::schedule::LineTag::User(0),
            frame,
            id_base: 0,
            parent_id_base: 0,
            pieces,
            masses: vec![Rational::one()],
            per_parent: vec![],
        }
    }

    #[test]
    fn measure_zero_family_small() {
        // d=3, k=1: D = 3
        let stage = synthetic_stage(3, 8);
        let fam = measure_zero_family(&stage, 3, 1, 8).unwrap();
        assert_eq!(fam.planes.len(), 8);
        assert_eq!(fam.report.disjoint_failures, 0);
        assert_eq!(fam.report.parallel_failures, 0);
        // every plane lies in the slice x_3 = t
        for p in &fam.planes {
            assert_eq!(p.y[1], vec![Rational::zero()]);
        }
    }

    #[test]
    fn measure_zero_family_collision_detected() {
        let mut stage = synthetic_stage(3, 4);
        // force a collision in coordinate 0
        let dup = stage.pieces[0].lo[0].clone();
        stage.pieces[1].lo[0] = dup;
        let err = measure_zero_family(&stage, 3, 1, 4);
        assert!(matches!(err, Err(Error::SampleNotInjective { coord: 0 })));
    }

    #[test]
    fn dimension_family_cases() {
        // s = 0: a single plane
        let stage = synthetic_stage(3, 4);
        let fam = dimension_family(4, 1, &Rational::zero(), &stage, 4).unwrap();
        assert_eq!(fam.planes.len(), 1);

        // d=4, k=1, s=3: m = 2 ≥ max(2, (1+3)/2) -> blocks of size 2, D = 3
        let fam = dimension_family(4, 1, &Rational::from_int(3), &stage, 4).unwrap();
        assert_eq!(fam.case_m, Some(2));
        assert_eq!(fam.planes.len(), 4);
        assert_eq!(fam.report.disjoint_failures, 0);
        assert_eq!(fam.report.parallel_failures, 0);

        // d=4, k=1, s=4: m = 2 ≤ 5/2 -> template with m+1 = 3, D = 5
        let stage5 = synthetic_stage(5, 6);
        let fam = dimension_family(4, 1, &Rational::from_int(4), &stage5, 6).unwrap();
        assert_eq!(fam.case_m, Some(2));
        assert!(fam.provenance.contains("m'=3"));
        assert_eq!(fam.report.disjoint_failures, 0);
        assert_eq!(fam.report.parallel_failures, 0);

        // out-of-range s
        assert!(dimension_family(4, 1, &Rational::from_int(7), &stage, 4).is_err());
    }

    #[test]
    fn dual_sections_match_certificates() {
        // d=2 run with user line (0,1) = vertical x=0; sections of the stage
        // onto (0,1) must equal the stage's own projection intervals
        let user = vec![Direction::from_ints(&[0, 1]).unwrap()];
        let sched = build_schedule(&user, 2, 9).unwrap();
        let cube = Stage::cube(&sched).unwrap();
        let s1 = build_stage(&cube, &sched, 1, 5, 2, &BuildLimits { max_pieces: None }).unwrap();
        let fam = dual_hyperplanes(&s1, &[vec![Rational::zero()]], &user, 4).unwrap();
        assert_eq!(fam.sections.len(), 1);
        let n = s1.pieces.len();
        assert_eq!(fam.sections[0].intervals.len(), n);
        for (i, (lo, hi)) in fam.sections[0].intervals.iter().enumerate() {
            let (wlo, whi) = s1.interval_of(i);
            assert_eq!(lo, &wlo.to_rational());
            assert_eq!(hi, &whi.to_rational());
        }

        // a vertical whose direction is not scheduled errors out
        let err = dual_hyperplanes(&s1, &[vec![Rational::one()]], &user, 4);
        assert!(matches!(err, Err(Error::LineNotInSchedule(_))));

        // single point (a,b): its section value is a·x + b
        let rep = representatives(&s1, 1).unwrap();
        let h = &fam.hyperplanes[0];
        assert_eq!(h.a[0], rep[0][0]);
        assert_eq!(h.b, rep[0][1]);
    }
}
