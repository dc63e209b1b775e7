//! Exact-arithmetic engine for nested slab constructions with injective
//! projections.
//!
//! The crate builds finite-depth approximations of a compact subset of
//! [0,1]^d that projects injectively onto a prescribed family of lines,
//! certifies every finitely checkable property of the construction
//! (interval disjointness, injectivity, the counting recursion, mass and
//! energy bounds, box-count trends), and derives two applications: families
//! of pairwise disjoint non-parallel k-planes with small unions, and dual
//! hyperplane families whose sections with prescribed vertical lines are
//! small and injective.
//!
//! Everything that feeds a verdict is computed over exact dyadic and
//! rational arithmetic; floating point appears only in reported display
//! values, slopes, and the energy estimate.
//!
//! Module map:
//! - [`rational`], [`dyadic`], [`direction`], [`linalg`], [`geom`]: the
//!   exact kernel (scalars, primitive directions, fraction-free solves,
//!   slab parallelepipeds).
//! - [`schedule`]: the repeating line listing and the (n_k, a_k) planner.
//! - [`construction`]: stage building, mass assignment, certificates.
//! - [`analysis`]: counting recursion, projected widths, box counts,
//!   measure series, ball-mass bounds, energy sums.
//! - [`planes`]: k-plane families and the dual hyperplane application.
//! - [`runner`]: configuration, orchestration, reports, and file exports.

pub mod analysis;
pub mod construction;
pub mod direction;
pub mod dyadic;
pub mod error;
pub mod geom;
pub mod linalg;
pub mod planes;
pub mod rational;
pub mod runner;
pub mod schedule;

pub use direction::{canonicalize_direction, scaled_projection, Direction};
pub use dyadic::Dyadic;
pub use error::{Error, Result};
pub use geom::{piece_vertices, projection_range, Piece, Slab};
pub use rational::Rational;
