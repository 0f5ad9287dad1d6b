//! Exact symbolic engine deciding membership of a polynomial in the
//! continuous closure of a monomial ideal over the Gaussian rationals.
//!
//! The engine builds the toric model of the blow-up of the ideal, runs
//! per-fiber linear span tests over the exceptional stratification, and
//! emits machine-checkable outcomes: refutations carry a point set with a
//! nonzero determinant, memberships carry an explicit continuous
//! semi-algebraic witness validated both symbolically and numerically.

pub mod poly;
pub mod linalg;
pub mod newton;
pub mod descent;
pub mod findet;
pub mod closure;
pub mod witness;
pub mod cli;

pub use poly::{LaurentPoly, MonomialIdeal, Scalar};
