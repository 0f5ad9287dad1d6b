//! Exact linear algebra used by the span tests: Gaussian elimination over
//! the Gaussian rationals, fraction-free (Bareiss) elimination over Laurent
//! polynomial matrices, and unimodular integer column reduction.

use crate::poly::{ExpVec, LaurentPoly, Scalar};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

// ---------------------------------------------------------------------------
// Scalar (Gaussian rational) matrices, row-major Vec<Vec<Scalar>>.
// ---------------------------------------------------------------------------

pub fn srank(m: &[Vec<Scalar>]) -> usize {
    let mut m: Vec<Vec<Scalar>> = m.to_vec();
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        let pivot = (row..rows).find(|&r| !m[r][col].is_zero());
        let Some(p) = pivot else { continue };
        m.swap(row, p);
        let inv = m[row][col].inv();
        for r in 0..rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].mul(&inv);
                for c in col..cols {
                    let sub = factor.mul(&m[row][c]);
                    m[r][c] = m[r][c].sub(&sub);
                }
            }
        }
        rank += 1;
        row += 1;
        if row == rows {
            break;
        }
    }
    rank
}

/// Solve `A c = b` exactly over the Gaussian rationals. Returns a particular
/// solution with free unknowns set to zero, or `None` when inconsistent.
pub fn ssolve(a: &[Vec<Scalar>], b: &[Scalar]) -> Option<Vec<Scalar>> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut m: Vec<Vec<Scalar>> = a
        .iter()
        .zip(b)
        .map(|(r, x)| {
            let mut row = r.clone();
            row.push(x.clone());
            row
        })
        .collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        let Some(p) = (row..rows).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        let inv = m[row][col].inv();
        for c in col..=cols {
            m[row][c] = m[row][c].mul(&inv);
        }
        for r in 0..rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in col..=cols {
                    let sub = factor.mul(&m[row][c]);
                    m[r][c] = m[r][c].sub(&sub);
                }
            }
        }
        pivots.push((row, col));
        row += 1;
        if row == rows {
            break;
        }
    }
    // Inconsistency: zero LHS row with nonzero RHS.
    for r in row..rows {
        if !m[r][cols].is_zero() {
            return None;
        }
    }
    let mut sol = vec![Scalar::zero(); cols];
    for &(r, c) in &pivots {
        sol[c] = m[r][cols].clone();
    }
    Some(sol)
}

/// Nullspace basis (free-variable unit vectors back-substituted).
pub fn snull(a: &[Vec<Scalar>]) -> Vec<Vec<Scalar>> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut m: Vec<Vec<Scalar>> = a.to_vec();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        let Some(p) = (row..rows).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        let inv = m[row][col].inv();
        for c in col..cols {
            m[row][c] = m[row][c].mul(&inv);
        }
        for r in 0..rows {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in col..cols {
                    let sub = factor.mul(&m[row][c]);
                    m[r][c] = m[r][c].sub(&sub);
                }
            }
        }
        pivots.push((row, col));
        row += 1;
        if row == rows {
            break;
        }
    }
    let pivot_cols: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
    let mut basis = Vec::new();
    for free in (0..cols).filter(|c| !pivot_cols.contains(c)) {
        let mut v = vec![Scalar::zero(); cols];
        v[free] = Scalar::one();
        for &(r, c) in &pivots {
            v[c] = m[r][free].neg();
        }
        basis.push(v);
    }
    basis
}

/// Exact determinant of a square Scalar matrix by cofactor-free elimination.
pub fn sdet(m: &[Vec<Scalar>]) -> Scalar {
    let n = m.len();
    let mut m: Vec<Vec<Scalar>> = m.to_vec();
    let mut det = Scalar::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return Scalar::zero();
        };
        if p != col {
            m.swap(col, p);
            det = det.neg();
        }
        det = det.mul(&m[col][col]);
        let inv = m[col][col].inv();
        for r in col + 1..n {
            if !m[r][col].is_zero() {
                let factor = m[r][col].mul(&inv);
                for c in col..n {
                    let sub = factor.mul(&m[col][c]);
                    m[r][c] = m[r][c].sub(&sub);
                }
            }
        }
    }
    det
}

// ---------------------------------------------------------------------------
// Rational functions (unreduced fractions of Laurent polynomials).
// ---------------------------------------------------------------------------

/// Fraction of Laurent polynomials. Not reduced to lowest terms; the
/// denominator is normalized to have leading coefficient 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatFn {
    pub num: LaurentPoly,
    pub den: LaurentPoly,
}

impl RatFn {
    pub fn from_poly(p: LaurentPoly) -> Self {
        let den = LaurentPoly::one(p.vars());
        RatFn { num: p, den }
    }

    pub fn new(num: LaurentPoly, den: LaurentPoly) -> Self {
        assert!(!den.is_zero(), "zero denominator");
        let mut r = RatFn { num, den };
        r.normalize();
        r
    }

    fn normalize(&mut self) {
        if self.num.is_zero() {
            self.den = LaurentPoly::one(self.num.vars());
            return;
        }
        // Divide out the denominator when division is exact; otherwise just
        // normalize the leading coefficient.
        if let Some(q) = self.num.div_exact(&self.den) {
            self.num = q;
            self.den = LaurentPoly::one(self.num.vars());
            return;
        }
        let lead = self.den.leading().map(|(_, c)| c.clone()).unwrap();
        if !lead.is_one() {
            let inv = lead.inv();
            self.num = self.num.scale(&inv);
            self.den = self.den.scale(&inv);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_one()
    }

    pub fn add(&self, o: &RatFn) -> RatFn {
        RatFn::new(
            self.num.mul(&o.den).add(&o.num.mul(&self.den)),
            self.den.mul(&o.den),
        )
    }

    pub fn sub(&self, o: &RatFn) -> RatFn {
        RatFn::new(
            self.num.mul(&o.den).sub(&o.num.mul(&self.den)),
            self.den.mul(&o.den),
        )
    }

    pub fn mul(&self, o: &RatFn) -> RatFn {
        RatFn::new(self.num.mul(&o.num), self.den.mul(&o.den))
    }

    pub fn div(&self, o: &RatFn) -> RatFn {
        assert!(!o.num.is_zero(), "division by zero RatFn");
        RatFn::new(self.num.mul(&o.den), self.den.mul(&o.num))
    }

    pub fn neg(&self) -> RatFn {
        RatFn { num: self.num.neg(), den: self.den.clone() }
    }

    /// Exact evaluation at a point with nonzero denominator.
    pub fn eval(&self, point: &[Scalar]) -> Option<Scalar> {
        let d = self.den.eval(point).ok()?;
        if d.is_zero() {
            return None;
        }
        let n = self.num.eval(point).ok()?;
        Some(n.div(&d))
    }
}

impl std::fmt::Display for RatFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den.is_one() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "({})/({})", self.num, self.den)
        }
    }
}

// ---------------------------------------------------------------------------
// Fraction-free elimination over Laurent polynomial matrices.
// ---------------------------------------------------------------------------

pub struct PolyEchelon {
    /// Reduced rows, including the appended right-hand-side columns.
    pub rows: Vec<Vec<LaurentPoly>>,
    /// (row, col) pivot positions within the LHS block.
    pub pivots: Vec<(usize, usize)>,
    /// Number of LHS columns.
    pub lhs_cols: usize,
    /// True when every pivot is a single Laurent monomial (hence a unit on
    /// the ambient torus and the rank is constant over the stratum).
    pub monomial_pivots: bool,
}

/// Bareiss fraction-free forward elimination of `[A | B]` where the first
/// `lhs_cols` columns are eliminated. Exact division by the previous pivot
/// holds in any integral domain.
pub fn bareiss_echelon(mut rows: Vec<Vec<LaurentPoly>>, lhs_cols: usize) -> PolyEchelon {
    let nrows = rows.len();
    let ncols = if nrows == 0 { 0 } else { rows[0].len() };
    let mut pivots = Vec::new();
    let mut prev_pivot: Option<LaurentPoly> = None;
    let mut monomial_pivots = true;
    let mut row = 0;
    for col in 0..lhs_cols.min(ncols) {
        // Deterministic pivot: smallest term count, then lowest row index.
        let cand = (row..nrows)
            .filter(|&r| !rows[r][col].is_zero())
            .min_by_key(|&r| (rows[r][col].num_terms(), r));
        let Some(p) = cand else { continue };
        rows.swap(row, p);
        let pivot = rows[row][col].clone();
        if pivot.num_terms() > 1 {
            monomial_pivots = false;
        }
        for r in row + 1..nrows {
            for c in 0..ncols {
                if c == col {
                    continue;
                }
                let t = pivot.mul(&rows[r][c]).sub(&rows[r][col].mul(&rows[row][c]));
                rows[r][c] = match &prev_pivot {
                    None => t,
                    Some(pp) => t
                        .div_exact(pp)
                        .expect("Bareiss exact division failed"),
                };
            }
            rows[r][col] = LaurentPoly::zero(pivot.vars());
        }
        pivots.push((row, col));
        prev_pivot = Some(pivot);
        row += 1;
        if row == nrows {
            break;
        }
    }
    PolyEchelon { rows, pivots, lhs_cols, monomial_pivots }
}

pub enum PolySolve {
    /// Solution over the fraction field, one entry per unknown.
    Solved { solution: Vec<RatFn>, monomial_pivots: bool },
    /// Inconsistent: index of a zero-LHS row with nonzero RHS.
    Inconsistent { witness_row: Vec<LaurentPoly> },
}

/// Solve `A c = b` over the fraction field of the Laurent ring, free
/// unknowns set to zero.
pub fn poly_solve(a: &[Vec<LaurentPoly>], b: &[LaurentPoly]) -> PolySolve {
    let lhs_cols = if a.is_empty() { 0 } else { a[0].len() };
    let rows: Vec<Vec<LaurentPoly>> = a
        .iter()
        .zip(b)
        .map(|(r, x)| {
            let mut row = r.clone();
            row.push(x.clone());
            row
        })
        .collect();
    let ech = bareiss_echelon(rows, lhs_cols);
    let rank = ech.pivots.len();
    for r in rank..ech.rows.len() {
        if !ech.rows[r][lhs_cols].is_zero() {
            return PolySolve::Inconsistent { witness_row: ech.rows[r].clone() };
        }
    }
    // Back-substitution with rational functions.
    let vars = if lhs_cols > 0 && !a.is_empty() {
        a[0][0].vars().to_vec()
    } else if !b.is_empty() {
        b[0].vars().to_vec()
    } else {
        Vec::new()
    };
    let zero = RatFn::from_poly(LaurentPoly::zero(&vars));
    let mut sol = vec![zero; lhs_cols];
    for &(r, c) in ech.pivots.iter().rev() {
        let mut rhs = RatFn::from_poly(ech.rows[r][lhs_cols].clone());
        for c2 in c + 1..lhs_cols {
            if !ech.rows[r][c2].is_zero() {
                let term = RatFn::from_poly(ech.rows[r][c2].clone()).mul(&sol[c2]);
                rhs = rhs.sub(&term);
            }
        }
        sol[c] = rhs.div(&RatFn::from_poly(ech.rows[r][c].clone()));
    }
    PolySolve::Solved { solution: sol, monomial_pivots: ech.monomial_pivots }
}

/// Rank over the fraction field.
pub fn poly_rank(a: &[Vec<LaurentPoly>]) -> usize {
    let lhs_cols = if a.is_empty() { 0 } else { a[0].len() };
    bareiss_echelon(a.to_vec(), lhs_cols).pivots.len()
}

// ---------------------------------------------------------------------------
// Integer matrices
// ---------------------------------------------------------------------------

/// For a surjective integer matrix `A` (rows x cols, rows <= cols), find a
/// unimodular `W` (cols x cols) with `A · W = [I | 0]`.
pub fn unimodular_right_inverse(a: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let rows = a.len();
    let cols = if rows == 0 { 0 } else { a[0].len() };
    let mut m: Vec<Vec<BigInt>> = a.to_vec();
    let mut w: Vec<Vec<BigInt>> = (0..cols)
        .map(|i| {
            (0..cols)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect();
    // Column operations tracked in w: m := a * w holds throughout.
    let col_add = |m: &mut Vec<Vec<BigInt>>, w: &mut Vec<Vec<BigInt>>, src: usize, dst: usize, k: &BigInt| {
        for row in m.iter_mut() {
            let t = &row[src] * k;
            row[dst] += t;
        }
        for row in w.iter_mut() {
            let t = &row[src] * k;
            row[dst] += t;
        }
    };
    let col_swap = |m: &mut Vec<Vec<BigInt>>, w: &mut Vec<Vec<BigInt>>, i: usize, j: usize| {
        for row in m.iter_mut() {
            row.swap(i, j);
        }
        for row in w.iter_mut() {
            row.swap(i, j);
        }
    };
    let col_neg = |m: &mut Vec<Vec<BigInt>>, w: &mut Vec<Vec<BigInt>>, i: usize| {
        for row in m.iter_mut() {
            row[i] = -row[i].clone();
        }
        for row in w.iter_mut() {
            row[i] = -row[i].clone();
        }
    };
    for r in 0..rows {
        // Euclidean reduction across columns r..cols on row r.
        loop {
            let mut nonzero: Vec<usize> = (r..cols).filter(|&c| !m[r][c].is_zero()).collect();
            assert!(!nonzero.is_empty(), "matrix not surjective");
            nonzero.sort_by_key(|&c| m[r][c].abs());
            let c0 = nonzero[0];
            if c0 != r {
                col_swap(&mut m, &mut w, r, c0);
            }
            if m[r][r].is_negative() {
                col_neg(&mut m, &mut w, r);
            }
            let mut done = true;
            for c in r + 1..cols {
                if !m[r][c].is_zero() {
                    let q = m[r][c].div_floor(&m[r][r]);
                    if !q.is_zero() {
                        let k = -q;
                        col_add(&mut m, &mut w, r, c, &k);
                    }
                    if !m[r][c].is_zero() {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        assert!(m[r][r].is_one(), "matrix not surjective over the integers");
        // Clear earlier columns on this row.
        for c in 0..r {
            if !m[r][c].is_zero() {
                let k = -m[r][c].clone();
                col_add(&mut m, &mut w, r, c, &k);
            }
        }
    }
    // Now m = [L | 0] with unit diagonal and zeros above/below? Ensure
    // exactly [I | 0]: clear entries above the diagonal too.
    for r in 0..rows {
        for c in 0..cols {
            if c == r {
                assert!(m[r][c].is_one());
            } else if c < rows {
                assert!(m[r][c].is_zero(), "reduction incomplete");
            } else {
                assert!(m[r][c].is_zero(), "reduction incomplete");
            }
        }
    }
    w
}

/// Determinant of a small integer matrix.
pub fn idet(m: &[Vec<BigInt>]) -> BigInt {
    let n = m.len();
    match n {
        0 => BigInt::one(),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        3 => {
            &m[0][0] * (&m[1][1] * &m[2][2] - &m[1][2] * &m[2][1])
                - &m[0][1] * (&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0])
                + &m[0][2] * (&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0])
        }
        _ => {
            // Laplace expansion; matrices here never exceed 4x4.
            let mut det = BigInt::zero();
            for j in 0..n {
                if m[0][j].is_zero() {
                    continue;
                }
                let minor: Vec<Vec<BigInt>> = (1..n)
                    .map(|r| (0..n).filter(|&c| c != j).map(|c| m[r][c].clone()).collect())
                    .collect();
                let term = &m[0][j] * idet(&minor);
                if j % 2 == 0 {
                    det += term;
                } else {
                    det -= term;
                }
            }
            det
        }
    }
}

/// Solve `M x = b` exactly over the rationals for integer input, returning
/// the rational solution as (numerator vector, common denominator), or None
/// if singular. Used for cone membership tests.
pub fn isolve(m: &[Vec<BigInt>], b: &[BigInt]) -> Option<(Vec<BigInt>, BigInt)> {
    let n = m.len();
    let det = idet(m);
    if det.is_zero() {
        return None;
    }
    // Cramer's rule.
    let mut xs = Vec::with_capacity(n);
    for j in 0..n {
        let mj: Vec<Vec<BigInt>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| if c == j { b[r].clone() } else { m[r][c].clone() })
                    .collect()
            })
            .collect();
        xs.push(idet(&mj));
    }
    Some((xs, det))
}

pub fn gcd_all(v: &[BigInt]) -> BigInt {
    v.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x))
}

/// Divide a vector by the gcd of its entries (primitive integer vector).
pub fn primitive(v: &[BigInt]) -> Vec<BigInt> {
    let g = gcd_all(v);
    if g.is_zero() || g.is_one() {
        return v.to_vec();
    }
    v.iter().map(|x| x / &g).collect()
}

/// Monomial ExpVec for a term of a solve; helper for building systems.
pub fn unit_exp(n: usize, i: usize, k: i64) -> ExpVec {
    let mut e = ExpVec::zeros(n);
    e.0[i] = BigInt::from(k);
    e
}
