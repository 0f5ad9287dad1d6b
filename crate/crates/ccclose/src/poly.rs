//! Exact arithmetic foundation: multivariate Laurent polynomials over the
//! Gaussian rationals, parsing, evaluation, and canonical forms.
//!
//! Coefficients are Gaussian rationals so that coefficient-field extension
//! checks have an honest proper extension of the rationals to work with.
//! Exponent vectors use arbitrary-precision integers; blow-up pullbacks
//! multiply exponents and must never silently wrap.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVar { name: String, pos: usize },
    #[error("variable lists do not match: [{0}] vs [{1}]")]
    VarMismatch(String, String),
    #[error("division by zero: coordinate `{0}` is zero but appears with negative exponent")]
    PoleAtZero(String),
    #[error("generator `{0}` is not a monomial with coefficient 1")]
    NonMonomialGenerator(String),
    #[error("generator has a negative exponent")]
    NegativeExponent,
    #[error("dimension cap exceeded: {0} variables (at most 3 supported)")]
    DimensionCap(usize),
    #[error("zero ideal")]
    ZeroIdeal,
}

/// Exact Gaussian rational `re + im*i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scalar {
    pub re: BigRational,
    pub im: BigRational,
}

impl Scalar {
    pub fn zero() -> Self {
        Scalar { re: BigRational::zero(), im: BigRational::zero() }
    }

    pub fn one() -> Self {
        Scalar { re: BigRational::one(), im: BigRational::zero() }
    }

    pub fn i() -> Self {
        Scalar { re: BigRational::zero(), im: BigRational::one() }
    }

    pub fn from_int(n: i64) -> Self {
        Scalar { re: BigRational::from_integer(BigInt::from(n)), im: BigRational::zero() }
    }

    pub fn from_rat(num: i64, den: i64) -> Self {
        Scalar {
            re: BigRational::new(BigInt::from(num), BigInt::from(den)),
            im: BigRational::zero(),
        }
    }

    pub fn from_parts(re: BigRational, im: BigRational) -> Self {
        Scalar { re, im }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Scalar { re: self.re.clone(), im: -self.im.clone() }
    }

    /// `|z|^2 = re^2 + im^2`, an exact rational.
    pub fn abs2(&self) -> BigRational {
        &self.re * &self.re + &self.im * &self.im
    }

    pub fn add(&self, o: &Scalar) -> Scalar {
        Scalar { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    pub fn sub(&self, o: &Scalar) -> Scalar {
        Scalar { re: &self.re - &o.re, im: &self.im - &o.im }
    }

    pub fn neg(&self) -> Scalar {
        Scalar { re: -self.re.clone(), im: -self.im.clone() }
    }

    pub fn mul(&self, o: &Scalar) -> Scalar {
        Scalar {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    /// Exact inverse; panics on zero.
    pub fn inv(&self) -> Scalar {
        let n = self.abs2();
        assert!(!n.is_zero(), "inverse of zero Scalar");
        Scalar { re: &self.re / &n, im: -(&self.im / &n) }
    }

    pub fn div(&self, o: &Scalar) -> Scalar {
        self.mul(&o.inv())
    }

    pub fn to_f64_pair(&self) -> (f64, f64) {
        (rat_to_f64(&self.re), rat_to_f64(&self.im))
    }
}

pub fn rat_to_f64(r: &BigRational) -> f64 {
    let n = r.numer();
    let d = r.denom();
    // Good enough at desk scale; exact integer to f64 then divide.
    bigint_to_f64(n) / bigint_to_f64(d)
}

fn bigint_to_f64(n: &BigInt) -> f64 {
    let (sign, digits) = n.to_u64_digits();
    let mut v = 0.0f64;
    for d in digits.iter().rev() {
        v = v * 1.8446744073709552e19 + *d as f64;
    }
    if sign == Sign::Minus { -v } else { v }
}

pub fn rat_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn parse_rat_string(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(BigRational::new(n, d))
    } else {
        let n: BigInt = s.parse().ok()?;
        Some(BigRational::from_integer(n))
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rat(r: &BigRational) -> String {
            if r.denom().is_one() {
                format!("{}", r.numer())
            } else {
                format!("{}/{}", r.numer(), r.denom())
            }
        }
        if self.im.is_zero() {
            write!(f, "{}", rat(&self.re))
        } else if self.re.is_zero() {
            if self.im.is_one() {
                write!(f, "i")
            } else if (-self.im.clone()).is_one() {
                write!(f, "-i")
            } else {
                write!(f, "{}*i", rat(&self.im))
            }
        } else {
            let im_abs = self.im.abs();
            let sign = if self.im.is_negative() { "-" } else { "+" };
            if im_abs.is_one() {
                write!(f, "({}{}i)", rat(&self.re), sign)
            } else {
                write!(f, "({}{}{}*i)", rat(&self.re), sign, rat(&im_abs))
            }
        }
    }
}

// Scalars serialize as "p/q" when real, as {"re","im"} otherwise.
impl serde::Serialize for Scalar {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.im.is_zero() {
            s.serialize_str(&rat_string(&self.re))
        } else {
            use serde::ser::SerializeStruct;
            let mut st = s.serialize_struct("Scalar", 2)?;
            st.serialize_field("re", &rat_string(&self.re))?;
            st.serialize_field("im", &rat_string(&self.im))?;
            st.end()
        }
    }
}

impl<'de> serde::Deserialize<'de> for Scalar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match &v {
            serde_json::Value::String(s) => parse_rat_string(s)
                .map(|re| Scalar::from_parts(re, BigRational::zero()))
                .ok_or_else(|| D::Error::custom("bad rational string")),
            serde_json::Value::Object(m) => {
                let re = m.get("re").and_then(|x| x.as_str()).and_then(parse_rat_string);
                let im = m.get("im").and_then(|x| x.as_str()).and_then(parse_rat_string);
                match (re, im) {
                    (Some(re), Some(im)) => Ok(Scalar::from_parts(re, im)),
                    _ => Err(D::Error::custom("bad complex scalar")),
                }
            }
            _ => Err(D::Error::custom("bad scalar")),
        }
    }
}

/// Integer exponent vector, ordered graded-lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExpVec(pub Vec<BigInt>);

impl ExpVec {
    pub fn zeros(n: usize) -> Self {
        ExpVec(vec![BigInt::zero(); n])
    }

    pub fn from_i64s(v: &[i64]) -> Self {
        ExpVec(v.iter().map(|&x| BigInt::from(x)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_degree(&self) -> BigInt {
        self.0.iter().sum()
    }

    pub fn add(&self, o: &ExpVec) -> ExpVec {
        ExpVec(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, o: &ExpVec) -> ExpVec {
        ExpVec(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }

    pub fn is_nonneg(&self) -> bool {
        self.0.iter().all(|x| !x.is_negative())
    }

    /// Componentwise `self <= o`.
    pub fn divides(&self, o: &ExpVec) -> bool {
        self.0.iter().zip(&o.0).all(|(a, b)| a <= b)
    }

    pub fn componentwise_min(&self, o: &ExpVec) -> ExpVec {
        ExpVec(self.0.iter().zip(&o.0).map(|(a, b)| a.min(b).clone()).collect())
    }

    pub fn to_i64s(&self) -> Vec<i64> {
        self.0
            .iter()
            .map(|x| i64::try_from(x).expect("exponent out of i64 range"))
            .collect()
    }
}

impl PartialOrd for ExpVec {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for ExpVec {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.total_degree()
            .cmp(&o.total_degree())
            .then_with(|| self.0.cmp(&o.0))
    }
}

/// Sparse multivariate Laurent polynomial with `Scalar` coefficients.
///
/// Canonical form: no stored zero coefficients; equality is equality of the
/// term maps together with the variable list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaurentPoly {
    vars: Vec<String>,
    terms: BTreeMap<ExpVec, Scalar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl LaurentPoly {
    pub fn zero(vars: &[String]) -> Self {
        LaurentPoly { vars: vars.to_vec(), terms: BTreeMap::new() }
    }

    pub fn one(vars: &[String]) -> Self {
        Self::constant(Scalar::one(), vars)
    }

    pub fn constant(c: Scalar, vars: &[String]) -> Self {
        let mut p = Self::zero(vars);
        if !c.is_zero() {
            p.terms.insert(ExpVec::zeros(vars.len()), c);
        }
        p
    }

    pub fn var(idx: usize, vars: &[String]) -> Self {
        let mut e = ExpVec::zeros(vars.len());
        e.0[idx] = BigInt::one();
        Self::monomial(e, Scalar::one(), vars)
    }

    pub fn monomial(exp: ExpVec, coeff: Scalar, vars: &[String]) -> Self {
        assert_eq!(exp.len(), vars.len());
        let mut p = Self::zero(vars);
        if !coeff.is_zero() {
            p.terms.insert(exp, coeff);
        }
        p
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&ExpVec, &Scalar)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .iter()
                .all(|(e, c)| e.total_degree().is_zero() && e.is_nonneg() && c.is_one())
    }

    /// True when no exponent is negative.
    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|e| e.is_nonneg())
    }

    pub fn coeff(&self, e: &ExpVec) -> Scalar {
        self.terms.get(e).cloned().unwrap_or_else(Scalar::zero)
    }

    /// Maximum total degree, `None` for the zero polynomial.
    pub fn total_degree(&self) -> Option<BigInt> {
        self.terms.keys().map(|e| e.total_degree()).max()
    }

    pub fn add_term(&mut self, exp: ExpVec, coeff: Scalar) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(exp) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().add(&coeff);
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn same_vars(&self, o: &LaurentPoly) -> bool {
        self.vars == o.vars
    }

    pub fn neg(&self) -> LaurentPoly {
        LaurentPoly {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c.neg())).collect(),
        }
    }

    pub fn add(&self, o: &LaurentPoly) -> LaurentPoly {
        debug_assert!(self.same_vars(o));
        let mut r = self.clone();
        for (e, c) in &o.terms {
            r.add_term(e.clone(), c.clone());
        }
        r
    }

    pub fn sub(&self, o: &LaurentPoly) -> LaurentPoly {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &LaurentPoly) -> LaurentPoly {
        debug_assert!(self.same_vars(o));
        let mut r = Self::zero(&self.vars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                r.add_term(e1.add(e2), c1.mul(c2));
            }
        }
        r
    }

    pub fn scale(&self, c: &Scalar) -> LaurentPoly {
        if c.is_zero() {
            return Self::zero(&self.vars);
        }
        LaurentPoly {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(e, k)| (e.clone(), k.mul(c))).collect(),
        }
    }

    pub fn pow(&self, n: u64) -> LaurentPoly {
        let mut result = Self::one(&self.vars);
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                result = result.mul(&base);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base);
            }
        }
        result
    }

    /// Exact division by the monomial `x^m`: shifts every exponent down by `m`.
    pub fn monomial_divide(&self, m: &ExpVec) -> LaurentPoly {
        assert_eq!(m.len(), self.vars.len());
        LaurentPoly {
            vars: self.vars.clone(),
            terms: self.terms.iter().map(|(e, c)| (e.sub(m), c.clone())).collect(),
        }
    }

    /// Exact evaluation. Errors when a coordinate is zero at a negative exponent.
    pub fn eval(&self, point: &[Scalar]) -> Result<Scalar, PolyError> {
        assert_eq!(point.len(), self.vars.len());
        let mut acc = Scalar::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (idx, exp) in e.0.iter().enumerate() {
                if exp.is_zero() {
                    continue;
                }
                if point[idx].is_zero() {
                    if exp.is_negative() {
                        return Err(PolyError::PoleAtZero(self.vars[idx].clone()));
                    }
                    t = Scalar::zero();
                    break;
                }
                let k = i64::try_from(exp).expect("exponent out of range in eval");
                let base = if k < 0 { point[idx].inv() } else { point[idx].clone() };
                for _ in 0..k.unsigned_abs() {
                    t = t.mul(&base);
                }
            }
            acc = acc.add(&t);
        }
        Ok(acc)
    }

    /// Minimal exponent per listed coordinate over all terms (pole profile).
    pub fn min_exponents_on(&self, coords: &BTreeSet<usize>) -> BTreeMap<usize, BigInt> {
        let mut out = BTreeMap::new();
        for &i in coords {
            let mut m: Option<BigInt> = None;
            for e in self.terms.keys() {
                let v = e.0[i].clone();
                m = Some(match m {
                    None => v,
                    Some(cur) => cur.min(v),
                });
            }
            out.insert(i, m.unwrap_or_else(BigInt::zero));
        }
        out
    }

    /// Restriction to the coordinate subspace `{x_i = 0 : i in coords}`:
    /// terms with a positive exponent on a zeroed coordinate die; a negative
    /// exponent there is a pole and yields `None`.
    pub fn restrict_zero(&self, coords: &BTreeSet<usize>) -> Option<LaurentPoly> {
        let mut r = Self::zero(&self.vars);
        for (e, c) in &self.terms {
            let mut keep = true;
            for &i in coords {
                if e.0[i].is_negative() {
                    return None;
                }
                if e.0[i].is_positive() {
                    keep = false;
                    break;
                }
            }
            if keep {
                r.terms.insert(e.clone(), c.clone());
            }
        }
        Some(r)
    }

    /// Monomial substitution `x_j -> prod_i u_i^{M[i][j]}`; exponent vectors map
    /// linearly by `b -> M·b`. `M` has one row per target variable.
    pub fn exp_map(&self, m: &[Vec<BigInt>], new_vars: &[String]) -> LaurentPoly {
        assert_eq!(m.len(), new_vars.len());
        let mut r = LaurentPoly::zero(new_vars);
        for (e, c) in &self.terms {
            let new_exp = ExpVec(
                m.iter()
                    .map(|row| {
                        assert_eq!(row.len(), e.len());
                        row.iter().zip(&e.0).map(|(a, b)| a * b).sum()
                    })
                    .collect(),
            );
            r.add_term(new_exp, c.clone());
        }
        r
    }

    /// Permute variables: new poly in `new_vars` with exponent i taken from
    /// old position `perm[i]`.
    pub fn permute_vars(&self, perm: &[usize], new_vars: &[String]) -> LaurentPoly {
        let mut r = LaurentPoly::zero(new_vars);
        for (e, c) in &self.terms {
            let new_exp = ExpVec(perm.iter().map(|&j| e.0[j].clone()).collect());
            r.add_term(new_exp, c.clone());
        }
        r
    }

    /// Substitute `x_i -> lambda_i * x_i`.
    pub fn scale_vars(&self, lambda: &[Scalar]) -> LaurentPoly {
        let mut r = LaurentPoly::zero(&self.vars);
        for (e, c) in &self.terms {
            let mut k = c.clone();
            for (i, l) in lambda.iter().enumerate() {
                let exp = i64::try_from(&e.0[i]).expect("exponent range");
                let base = if exp < 0 { l.inv() } else { l.clone() };
                for _ in 0..exp.unsigned_abs() {
                    k = k.mul(&base);
                }
            }
            r.add_term(e.clone(), k);
        }
        r
    }

    /// Leading term in graded-lex order.
    pub fn leading(&self) -> Option<(&ExpVec, &Scalar)> {
        self.terms.iter().next_back()
    }

    /// Componentwise minimum exponent over all terms (monomial content).
    pub fn content_exponent(&self) -> ExpVec {
        let mut it = self.terms.keys();
        let first = it.next().expect("nonzero polynomial").clone();
        it.fold(first, |acc, e| acc.componentwise_min(e))
    }

    /// Exact division: `Some(h)` iff `self = q*h` exactly.
    ///
    /// Both operands are first shifted by their monomial content so that the
    /// division runs in the polynomial cone, where graded-lex leading terms
    /// are well-ordered and the greedy division terminates.
    pub fn div_exact(&self, q: &LaurentPoly) -> Option<LaurentPoly> {
        debug_assert!(self.same_vars(q));
        if q.is_zero() {
            return None;
        }
        if self.is_zero() {
            return Some(LaurentPoly::zero(&self.vars));
        }
        let mp = self.content_exponent();
        let mq = q.content_exponent();
        let phat = self.monomial_divide(&mp);
        let qhat = q.monomial_divide(&mq);
        let (qe, qc) = {
            let (e, c) = qhat.leading().unwrap();
            (e.clone(), c.clone())
        };
        let mut rem = phat;
        let mut quo = LaurentPoly::zero(&self.vars);
        while !rem.is_zero() {
            let (re, rc) = {
                let (e, c) = rem.leading().unwrap();
                (e.clone(), c.clone())
            };
            let te = re.sub(&qe);
            if !te.is_nonneg() {
                return None;
            }
            let tc = rc.div(&qc);
            let t = LaurentPoly::monomial(te, tc, &self.vars);
            quo = quo.add(&t);
            rem = rem.sub(&t.mul(&qhat));
        }
        Some(quo.mul(&LaurentPoly::monomial(mp.sub(&mq), Scalar::one(), &self.vars)))
    }

    /// Map coefficients through `f` (used for conjugation).
    pub fn map_coeffs(&self, f: impl Fn(&Scalar) -> Scalar) -> LaurentPoly {
        let mut r = LaurentPoly::zero(&self.vars);
        for (e, c) in &self.terms {
            r.add_term(e.clone(), f(c));
        }
        r
    }

    /// Rename the variable list without touching exponents.
    pub fn with_vars(&self, vars: &[String]) -> LaurentPoly {
        assert_eq!(vars.len(), self.vars.len());
        LaurentPoly { vars: vars.to_vec(), terms: self.terms.clone() }
    }

    /// Extend to a larger variable ring, placing old variable `i` at
    /// position `positions[i]`.
    pub fn extend_vars(&self, new_vars: &[String], positions: &[usize]) -> LaurentPoly {
        let mut r = LaurentPoly::zero(new_vars);
        for (e, c) in &self.terms {
            let mut ne = ExpVec::zeros(new_vars.len());
            for (i, x) in e.0.iter().enumerate() {
                ne.0[positions[i]] = x.clone();
            }
            r.add_term(ne, c.clone());
        }
        r
    }
}

/// Checked ring operations with variable-list validation.
pub fn arith(op: ArithOp, p: &LaurentPoly, q: &LaurentPoly) -> Result<LaurentPoly, PolyError> {
    if p.vars != q.vars {
        return Err(PolyError::VarMismatch(p.vars.join(","), q.vars.join(",")));
    }
    Ok(match op {
        ArithOp::Add => p.add(q),
        ArithOp::Sub => p.sub(q),
        ArithOp::Mul => p.mul(q),
    })
}

impl fmt::Display for LaurentPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            let mono = monomial_string(e, &self.vars);
            let (sign, mag) = coeff_parts(c);
            if first {
                if sign < 0 {
                    write!(f, "-")?;
                }
                first = false;
            } else if sign < 0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            match (mag.as_str(), mono.as_str()) {
                ("1", "") => write!(f, "1")?,
                ("1", m) => write!(f, "{}", m)?,
                (c, "") => write!(f, "{}", c)?,
                (c, m) => write!(f, "{}*{}", c, m)?,
            }
        }
        Ok(())
    }
}

fn monomial_string(e: &ExpVec, vars: &[String]) -> String {
    let mut parts = Vec::new();
    for (i, x) in e.0.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        if x.is_one() {
            parts.push(vars[i].clone());
        } else {
            parts.push(format!("{}^{}", vars[i], x));
        }
    }
    parts.join("*")
}

/// Split a coefficient into a printable sign and magnitude. Mixed complex
/// coefficients keep their sign inside the parenthesized form.
fn coeff_parts(c: &Scalar) -> (i32, String) {
    if c.im.is_zero() {
        if c.re.is_negative() {
            (-1, format!("{}", Scalar::from_parts(c.re.abs(), BigRational::zero())))
        } else {
            (1, format!("{}", c))
        }
    } else if c.re.is_zero() {
        if c.im.is_negative() {
            let m = Scalar::from_parts(BigRational::zero(), c.im.abs());
            (-1, format!("{}", m))
        } else {
            (1, format!("{}", c))
        }
    } else {
        (1, format!("{}", c))
    }
}

// ---------------------------------------------------------------------------
// Parser
//
// Grammar (whitespace insignificant):
//   expr   := ['+'|'-'] term (('+'|'-') term)*
//   term   := factor ('*' factor)*
//   factor := atom ('^' NAT)*
//   atom   := IDENT | LITERAL | 'i' | '(' expr ')'
//   LITERAL := INT ('/' INT)?
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn err<T>(&self, msg: &str) -> Result<T, PolyError> {
        Err(PolyError::Syntax { pos: self.pos, msg: msg.to_string() })
    }

    fn expr(&mut self) -> Result<LaurentPoly, PolyError> {
        let mut neg = false;
        match self.peek() {
            Some(b'+') => {
                self.pos += 1;
            }
            Some(b'-') => {
                self.pos += 1;
                neg = true;
            }
            _ => {}
        }
        let mut acc = self.term()?;
        if neg {
            acc = acc.neg();
        }
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = acc.add(&t);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let t = self.term()?;
                    acc = acc.sub(&t);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<LaurentPoly, PolyError> {
        let mut acc = self.factor()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            let f = self.factor()?;
            acc = acc.mul(&f);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<LaurentPoly, PolyError> {
        let mut base = self.atom()?;
        while self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return self.err("expected nonnegative integer exponent after `^`");
            }
            let n: u64 = std::str::from_utf8(&self.src[start..self.pos])
                .unwrap()
                .parse()
                .map_err(|_| PolyError::Syntax {
                    pos: start,
                    msg: "exponent literal too large".into(),
                })?;
            base = base.pow(n);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<LaurentPoly, PolyError> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => self.literal(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(b'-') => {
                self.pos += 1;
                Ok(self.factor()?.neg())
            }
            Some(_) => self.err("unexpected character"),
        }
    }

    fn literal(&mut self) -> Result<LaurentPoly, PolyError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let num: BigInt = std::str::from_utf8(&self.src[start..self.pos]).unwrap().parse().unwrap();
        let mut den = BigInt::one();
        if self.src.get(self.pos) == Some(&b'/') {
            self.pos += 1;
            let ds = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if ds == self.pos {
                return self.err("expected denominator digits");
            }
            den = std::str::from_utf8(&self.src[ds..self.pos]).unwrap().parse().unwrap();
            if den.is_zero() {
                return Err(PolyError::Syntax { pos: ds, msg: "zero denominator".into() });
            }
        }
        let c = Scalar::from_parts(BigRational::new(num, den), BigRational::zero());
        Ok(LaurentPoly::constant(c, self.vars))
    }

    fn ident(&mut self) -> Result<LaurentPoly, PolyError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        if name == "i" {
            return Ok(LaurentPoly::constant(Scalar::i(), self.vars));
        }
        match self.vars.iter().position(|v| v == name) {
            Some(idx) => Ok(LaurentPoly::var(idx, self.vars)),
            None => Err(PolyError::UnknownVar { name: name.to_string(), pos: start }),
        }
    }
}

/// Parse a polynomial in the fixed grammar against a declared variable list.
pub fn parse_poly(text: &str, vars: &[String]) -> Result<LaurentPoly, PolyError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, vars };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(PolyError::Syntax { pos: p.pos, msg: "trailing input".into() });
    }
    Ok(e)
}

pub fn vars_of(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

// ---------------------------------------------------------------------------
// Monomial ideals
// ---------------------------------------------------------------------------

/// Monomial ideal over a fixed variable list.
///
/// `gens` is the unique minimal monomial generating set. The generator list
/// as originally presented (possibly redundant or duplicated) is kept
/// alongside: the presentation fixes the rank of the source bundle in the
/// induced descent problem, while the minimal set drives the geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialIdeal {
    pub vars: Vec<String>,
    pub gens: Vec<ExpVec>,
    pub presented: Vec<ExpVec>,
}

impl MonomialIdeal {
    pub fn new(vars: Vec<String>, presented: Vec<ExpVec>) -> Result<Self, PolyError> {
        if vars.is_empty() || vars.len() > 3 {
            return Err(PolyError::DimensionCap(vars.len()));
        }
        for g in &presented {
            assert_eq!(g.len(), vars.len());
            if !g.is_nonneg() {
                return Err(PolyError::NegativeExponent);
            }
        }
        let mut gens: Vec<ExpVec> = Vec::new();
        let mut sorted = presented.clone();
        sorted.sort();
        sorted.dedup();
        for g in &sorted {
            if !sorted.iter().any(|h| h != g && h.divides(g)) && !gens.contains(g) {
                gens.push(g.clone());
            }
        }
        Ok(MonomialIdeal { vars, gens, presented })
    }

    /// Parse comma-separated monomial generator strings.
    pub fn parse(vars: &[String], gens: &str) -> Result<Self, PolyError> {
        let mut presented = Vec::new();
        for part in gens.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let p = parse_poly(part, vars)?;
            let ok = p.num_terms() == 1 && p.terms().next().map(|(_, c)| c.is_one()).unwrap_or(false);
            if !ok {
                return Err(PolyError::NonMonomialGenerator(part.to_string()));
            }
            let (e, _) = p.terms().next().unwrap();
            presented.push(e.clone());
        }
        if presented.is_empty() {
            return Err(PolyError::ZeroIdeal);
        }
        MonomialIdeal::new(vars.to_vec(), presented)
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Rank of the presented source bundle.
    pub fn rank(&self) -> usize {
        self.presented.len()
    }

    pub fn is_zero(&self) -> bool {
        self.presented.is_empty()
    }

    /// Exact ideal membership for monomial ideals: every term must be
    /// divisible by some generator. On success returns the quotient
    /// polynomials against the presented generators (first match wins).
    pub fn contains(&self, g: &LaurentPoly) -> Option<Vec<LaurentPoly>> {
        let mut quotients = vec![LaurentPoly::zero(&self.vars); self.presented.len()];
        for (e, c) in g.terms() {
            let hit = self.presented.iter().position(|a| a.divides(e))?;
            quotients[hit].add_term(e.sub(&self.presented[hit]), c.clone());
        }
        Some(quotients)
    }

    /// Componentwise minimum of the presented generators: the largest
    /// monomial factor of the ideal.
    pub fn gcd_exponent(&self) -> ExpVec {
        let mut it = self.presented.iter();
        let first = it.next().expect("nonzero ideal").clone();
        it.fold(first, |acc, g| acc.componentwise_min(g))
    }

    /// Divide all generators by the monomial `m` (must divide each).
    pub fn quotient_by_monomial(&self, m: &ExpVec) -> MonomialIdeal {
        let presented: Vec<ExpVec> = self.presented.iter().map(|g| g.sub(m)).collect();
        MonomialIdeal::new(self.vars.clone(), presented).expect("valid quotient ideal")
    }

    /// Does the coordinate orbit `{x_i = 0 iff i in zero}` lie in V(I)?
    /// True iff every generator has a positive exponent on some zeroed
    /// coordinate.
    pub fn orbit_in_vanishing(&self, zero: &BTreeSet<usize>) -> bool {
        self.gens
            .iter()
            .all(|g| zero.iter().any(|&i| g.0[i].is_positive()))
    }

    pub fn generator_poly(&self, idx: usize) -> LaurentPoly {
        LaurentPoly::monomial(self.presented[idx].clone(), Scalar::one(), &self.vars)
    }

    pub fn generator_strings(&self) -> Vec<String> {
        self.presented
            .iter()
            .map(|e| {
                let s = monomial_string(e, &self.vars);
                if s.is_empty() {
                    "1".to_string()
                } else {
                    s
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v2() -> Vec<String> {
        vars_of(&["x", "y"])
    }

    /// Independent expansion oracle: multiply out (p+q)^2 term by term
    /// without going through LaurentPoly::pow.
    fn naive_square(p: &LaurentPoly) -> LaurentPoly {
        let mut r = LaurentPoly::zero(p.vars());
        for (e1, c1) in p.terms() {
            for (e2, c2) in p.terms() {
                r.add_term(e1.add(e2), c1.mul(c2));
            }
        }
        r
    }

    #[test]
    fn parse_direct_terms() {
        let p = parse_poly("x^3 + y^3", &v2()).unwrap();
        assert_eq!(p.num_terms(), 2);
        assert!(p.coeff(&ExpVec::from_i64s(&[3, 0])).is_one());
        assert!(p.coeff(&ExpVec::from_i64s(&[0, 3])).is_one());
    }

    #[test]
    fn parse_zero() {
        let p = parse_poly("0", &v2()).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn parse_expansion_matches_oracle() {
        // (x+y)^2 - x^2 - y^2 = 2xy, cross-checked by a naive expansion.
        let xy = parse_poly("(x+y)^2 - x^2 - y^2", &v2()).unwrap();
        let mut expect = LaurentPoly::zero(&v2());
        expect.add_term(ExpVec::from_i64s(&[1, 1]), Scalar::from_int(2));
        assert_eq!(xy, expect);

        let p = parse_poly("x+y", &v2()).unwrap();
        let sq = naive_square(&p);
        assert_eq!(sq, p.pow(2));
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_poly("x + (y", &v2()) {
            Err(PolyError::Syntax { pos, .. }) => assert!(pos >= 6),
            other => panic!("expected syntax error, got {:?}", other),
        }
        match parse_poly("x + z", &v2()) {
            Err(PolyError::UnknownVar { name, .. }) => assert_eq!(name, "z"),
            other => panic!("expected unknown var, got {:?}", other),
        }
    }

    #[test]
    fn parse_rationals_and_i() {
        let p = parse_poly("1/2*x + 3*i*y - i", &v2()).unwrap();
        assert_eq!(p.coeff(&ExpVec::from_i64s(&[1, 0])), Scalar::from_rat(1, 2));
        assert_eq!(
            p.coeff(&ExpVec::from_i64s(&[0, 1])),
            Scalar::from_int(3).mul(&Scalar::i())
        );
        assert_eq!(p.coeff(&ExpVec::from_i64s(&[0, 0])), Scalar::i().neg());
    }

    #[test]
    fn arith_examples() {
        let x = LaurentPoly::var(0, &v2());
        let y = LaurentPoly::var(1, &v2());
        // additive inverse
        assert!(arith(ArithOp::Add, &x, &x.neg()).unwrap().is_zero());
        // monomial product
        let p = arith(ArithOp::Mul, &x, &y).unwrap();
        assert!(p.coeff(&ExpVec::from_i64s(&[1, 1])).is_one());
        // (x+y)(x-y) = x^2 - y^2 against schoolbook oracle
        let a = x.add(&y);
        let b = x.sub(&y);
        let prod = arith(ArithOp::Mul, &a, &b).unwrap();
        let expect = parse_poly("x^2 - y^2", &v2()).unwrap();
        assert_eq!(prod, expect);
        // mismatched variable lists rejected
        let z = LaurentPoly::var(0, &vars_of(&["z"]));
        assert!(matches!(arith(ArithOp::Add, &x, &z), Err(PolyError::VarMismatch(_, _))));
    }

    #[test]
    fn monomial_divide_examples() {
        let p = parse_poly("x^3*y^2", &v2()).unwrap();
        let q = p.monomial_divide(&ExpVec::from_i64s(&[3, 0]));
        assert_eq!(q, parse_poly("y^2", &v2()).unwrap());

        let p = parse_poly("x^3 + x^2*y", &v2()).unwrap();
        let q = p.monomial_divide(&ExpVec::from_i64s(&[3, 0]));
        // 1 + x^{-1} y, term by term
        assert!(q.coeff(&ExpVec::from_i64s(&[0, 0])).is_one());
        assert!(q.coeff(&ExpVec::from_i64s(&[-1, 1])).is_one());

        let z = LaurentPoly::zero(&v2());
        assert!(z.monomial_divide(&ExpVec::from_i64s(&[1, 1])).is_zero());
        // result * x^m == p exactly
        let m = ExpVec::from_i64s(&[3, 0]);
        let p = parse_poly("x^3 + x^2*y", &v2()).unwrap();
        let back = p
            .monomial_divide(&m)
            .mul(&LaurentPoly::monomial(m.clone(), Scalar::one(), &v2()));
        assert_eq!(back, p);
    }

    #[test]
    fn eval_examples() {
        let p = parse_poly("x^2*y^2", &v2()).unwrap();
        assert!(p.eval(&[Scalar::one(), Scalar::one()]).unwrap().is_one());

        let t = vars_of(&["t"]);
        let p = parse_poly("1 + t^3", &t).unwrap();
        assert_eq!(p.eval(&[Scalar::from_int(2)]).unwrap(), Scalar::from_int(9));

        let xinv = LaurentPoly::monomial(ExpVec::from_i64s(&[-1]), Scalar::one(), &t);
        assert!(matches!(xinv.eval(&[Scalar::zero()]), Err(PolyError::PoleAtZero(_))));
    }

    #[test]
    fn print_parse_roundtrip() {
        for s in [
            "x^3 + y^3",
            "2*x*y",
            "1/2*x^2 - 3*y + 1",
            "i*x + (1+2*i)*y",
            "-x + y",
            "0",
        ] {
            let p = parse_poly(s, &v2()).unwrap();
            let printed = format!("{}", p);
            let q = parse_poly(&printed, &v2()).unwrap();
            assert_eq!(p, q, "roundtrip failed for `{}` printed `{}`", s, printed);
        }
    }

    #[test]
    fn div_exact_works() {
        let p = parse_poly("x^2 - y^2", &v2()).unwrap();
        let q = parse_poly("x - y", &v2()).unwrap();
        let h = p.div_exact(&q).unwrap();
        assert_eq!(h, parse_poly("x + y", &v2()).unwrap());
        let bad = parse_poly("x^2 + y", &v2()).unwrap();
        assert!(bad.div_exact(&q).is_none());
    }

    #[test]
    fn ideal_minimality_and_membership() {
        let i = MonomialIdeal::parse(&v2(), "x^3, y^3, x^4, x^3").unwrap();
        assert_eq!(i.gens.len(), 2);
        assert_eq!(i.presented.len(), 4);
        let g = parse_poly("x^5*y + 2*y^3", &v2()).unwrap();
        let q = i.contains(&g).unwrap();
        // re-multiply and compare
        let mut back = LaurentPoly::zero(&v2());
        for (k, h) in q.iter().enumerate() {
            back = back.add(&h.mul(&i.generator_poly(k)));
        }
        assert_eq!(back, g);
        assert!(i.contains(&parse_poly("x^2*y^2", &v2()).unwrap()).is_none());
    }

    #[test]
    fn ideal_gcd_and_quotient() {
        let i = MonomialIdeal::parse(&v2(), "x^3*y, x*y^3").unwrap();
        assert_eq!(i.gcd_exponent(), ExpVec::from_i64s(&[1, 1]));
        let j = i.quotient_by_monomial(&ExpVec::from_i64s(&[1, 1]));
        assert_eq!(j.presented, vec![ExpVec::from_i64s(&[2, 0]), ExpVec::from_i64s(&[0, 2])]);
    }

    #[test]
    fn dimension_cap() {
        let vars = vars_of(&["a", "b", "c", "d"]);
        assert!(matches!(
            MonomialIdeal::parse(&vars, "a"),
            Err(PolyError::DimensionCap(4))
        ));
    }

    #[test]
    fn scalar_serialization() {
        let s = Scalar::from_int(-22);
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"-22/1\"");
        let c = Scalar::from_parts(
            BigRational::new(BigInt::from(1), BigInt::from(2)),
            BigRational::from_integer(BigInt::from(3)),
        );
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, "{\"re\":\"1/2\",\"im\":\"3/1\"}");
        let back: Scalar = serde_json::from_str(&j).unwrap();
        assert_eq!(back, c);
        let back2: Scalar = serde_json::from_str("\"-22/1\"").unwrap();
        assert_eq!(back2, s);
    }

    // -- property tests ----------------------------------------------------

    fn arb_scalar() -> impl Strategy<Value = Scalar> {
        (-6i64..7, 1i64..4, -3i64..4).prop_map(|(n, d, im)| {
            Scalar::from_parts(
                BigRational::new(BigInt::from(n), BigInt::from(d)),
                BigRational::from_integer(BigInt::from(im)),
            )
        })
    }

    fn arb_poly() -> impl Strategy<Value = LaurentPoly> {
        proptest::collection::vec(((-3i64..5, -3i64..5), arb_scalar()), 0..5).prop_map(|ts| {
            let mut p = LaurentPoly::zero(&v2());
            for ((a, b), c) in ts {
                p.add_term(ExpVec::from_i64s(&[a, b]), c);
            }
            p
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn ring_axioms(p in arb_poly(), q in arb_poly(), r in arb_poly()) {
            prop_assert_eq!(p.add(&q), q.add(&p));
            prop_assert_eq!(p.mul(&q), q.mul(&p));
            prop_assert_eq!(p.add(&q).add(&r), p.add(&q.add(&r)));
            prop_assert_eq!(p.mul(&q).mul(&r), p.mul(&q.mul(&r)));
            prop_assert_eq!(p.mul(&q.add(&r)), p.mul(&q).add(&p.mul(&r)));
        }

        #[test]
        fn eval_is_ring_hom(p in arb_poly(), q in arb_poly(), a in 1i64..5, b in 1i64..5) {
            let pt = [Scalar::from_int(a), Scalar::from_int(b)];
            let lhs = p.mul(&q).eval(&pt).unwrap();
            let rhs = p.eval(&pt).unwrap().mul(&q.eval(&pt).unwrap());
            prop_assert_eq!(lhs, rhs);
            let lhs = p.add(&q).eval(&pt).unwrap();
            let rhs = p.eval(&pt).unwrap().add(&q.eval(&pt).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn print_parse_identity(p in arb_poly()) {
            // restrict to parseable (nonnegative-exponent) polynomials
            let poly = LaurentPoly {
                vars: p.vars().to_vec(),
                terms: p.terms().map(|(e, c)| {
                    (ExpVec(e.0.iter().map(|x| x.abs()).collect()), c.clone())
                }).collect(),
            };
            let printed = format!("{}", poly);
            let back = parse_poly(&printed, &v2()).unwrap();
            prop_assert_eq!(back, poly);
        }
    }
}
