//! Finite-determinacy testing: the Wronskian span test, per-fiber linear
//! tests parametric over strata, and the stratified membership computation.
//!
//! A candidate section passes over a stratum when its chart expression is a
//! combination of the generator expressions with coefficients constant along
//! each fiber, entries in the function field of the stratum. Failures are
//! certified by a point set on one fiber whose evaluation determinant is
//! nonzero; poles along exceptional orbits are handled by clearing the
//! equation with the vanishing coordinates before restricting, which keeps
//! the point certificates sound.

use crate::descent::{FiniteModel, ToricProblem};
use crate::linalg::{poly_solve, sdet, srank, ssolve, PolySolve, RatFn};
use crate::newton::{fiber_param, Face, FiberParam};
use crate::poly::{ExpVec, LaurentPoly, Scalar};
use num_bigint::BigInt;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Outcome of a span test over one stratum.
#[derive(Debug, Clone)]
pub enum SpanResult {
    InSpan {
        /// Coefficients in the function field of the stratum, one per
        /// presented generator.
        coeffs: Vec<RatFn>,
        /// True when every elimination pivot was a Laurent monomial, hence
        /// invertible on the whole stratum torus: the rank is uniform and
        /// the solution specializes everywhere.
        uniform: bool,
    },
    NotInSpan {
        certificate: WronskianCertificate,
    },
}

impl SpanResult {
    pub fn is_in_span(&self) -> bool {
        matches!(self, SpanResult::InSpan { .. })
    }
}

/// Refutation certificate: evaluation points on a single fiber together
/// with the nonzero determinant of the stacked evaluation matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WronskianCertificate {
    #[serde(rename = "type")]
    pub doc_type: String,
    pub vars: Vec<String>,
    pub ideal: Vec<String>,
    pub candidate: String,
    /// Zero-set of the base stratum.
    pub stratum: Vec<usize>,
    /// The common image point of all evaluation points.
    pub base_point: Vec<Scalar>,
    pub points: Vec<CertPoint>,
    /// Generator indices forming a basis of the span of the generator
    /// expressions on this fiber.
    pub basis: Vec<usize>,
    /// Expression of each non-basis generator in the basis, valid on the
    /// whole fiber.
    pub dependencies: Vec<Dependency>,
    /// Rows: basis generator expressions, then the candidate; columns: the
    /// evaluation points.
    pub matrix: Vec<Vec<Scalar>>,
    pub det: Scalar,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertPoint {
    pub chart: usize,
    pub coords: Vec<Scalar>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dependency {
    pub gen: usize,
    pub coeffs: Vec<Scalar>,
}

// ---------------------------------------------------------------------------
// Fiber pieces: cleared chart expressions over one stratum
// ---------------------------------------------------------------------------

/// The cleared, restricted data of one face over a stratum, re-expressed in
/// base parameters z and fiber coordinates t.
#[derive(Debug, Clone)]
pub struct FiberPiece {
    pub face: Face,
    pub param: FiberParam,
    /// Ring: z variables then t variables.
    pub vars: Vec<String>,
    pub z_dim: usize,
    pub t_dim: usize,
    /// Cleared generator expressions (each a monomial or zero).
    pub f_exprs: Vec<LaurentPoly>,
    /// Cleared candidate expression.
    pub g_expr: LaurentPoly,
}

/// Build the fiber pieces of a candidate over one X-orbit stratum.
pub fn fiber_pieces(
    problem: &ToricProblem,
    g: &LaurentPoly,
    stratum: &BTreeSet<usize>,
) -> Vec<FiberPiece> {
    let atlas = &problem.atlas;
    let n = atlas.num_vars();
    let base: Vec<usize> = (0..n).filter(|j| !stratum.contains(j)).collect();
    let z_names: Vec<String> = base.iter().map(|&j| atlas.ideal.vars[j].clone()).collect();
    let mut out = Vec::new();
    for face in atlas.faces_over(stratum) {
        let chart = &atlas.charts[face.chart];
        let param = fiber_param(atlas, &face);
        let zero: BTreeSet<usize> = face.local_zero.iter().copied().collect();
        let g_tilde = chart.section_expr(g);
        // clearing: kill poles of the candidate on the vanishing coordinates
        let mins = g_tilde.min_exponents_on(&zero);
        let mut delta = ExpVec::zeros(chart.coords.len());
        for (&i, m) in mins.iter() {
            if m < &BigInt::zero() {
                delta.0[i] = -m.clone();
            }
        }
        let clear = LaurentPoly::monomial(delta, Scalar::one(), &chart.coords);
        let g_cleared = g_tilde
            .mul(&clear)
            .restrict_zero(&zero)
            .expect("cleared candidate is regular on the orbit");
        let f_cleared: Vec<LaurentPoly> = chart
            .f_tilde
            .iter()
            .map(|f| {
                f.mul(&clear)
                    .restrict_zero(&zero)
                    .expect("generator expressions are regular")
            })
            .collect();
        // re-express in (z, t)
        let t_dim = param.fiber_dim;
        let mut vars = z_names.clone();
        for j in 0..t_dim {
            vars.push(format!("t{}", j + 1));
        }
        let reexpress = |p: &LaurentPoly| -> LaurentPoly {
            let mut r = LaurentPoly::zero(&vars);
            for (e, c) in p.terms() {
                let (zb, tb) = param.split_exponent(e);
                let mut exp = ExpVec::zeros(vars.len());
                for (bi, v) in zb.into_iter().enumerate() {
                    exp.0[bi] = v;
                }
                for (ti, v) in tb.into_iter().enumerate() {
                    exp.0[z_names.len() + ti] = v;
                }
                r.add_term(exp, c.clone());
            }
            r
        };
        out.push(FiberPiece {
            f_exprs: f_cleared.iter().map(&reexpress).collect(),
            g_expr: reexpress(&g_cleared),
            face,
            param,
            vars,
            z_dim: z_names.len(),
            t_dim,
        });
    }
    // positive-dimensional pieces first: they carry the function content
    out.sort_by(|a, b| b.t_dim.cmp(&a.t_dim).then(a.face.rays.cmp(&b.face.rays)));
    out
}

/// Linear system for the constant-on-fibers coefficients over the stratum:
/// one equation per (piece, fiber monomial), entries Laurent monomials in
/// the stratum parameters.
pub struct SpanSystem {
    pub z_vars: Vec<String>,
    pub rows: Vec<Vec<LaurentPoly>>,
    pub rhs: Vec<LaurentPoly>,
}

pub fn span_system(pieces: &[FiberPiece], rank: usize) -> SpanSystem {
    let z_vars: Vec<String> = pieces
        .first()
        .map(|p| p.vars[..p.z_dim].to_vec())
        .unwrap_or_default();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for piece in pieces {
        // split every expression by its t-part
        let mut betas: BTreeSet<ExpVec> = BTreeSet::new();
        let split = |p: &LaurentPoly| -> BTreeMap<ExpVec, LaurentPoly> {
            let mut by_t: BTreeMap<ExpVec, LaurentPoly> = BTreeMap::new();
            for (e, c) in p.terms() {
                let t_part = ExpVec(e.0[piece.z_dim..].to_vec());
                let z_part = ExpVec(e.0[..piece.z_dim].to_vec());
                by_t.entry(t_part)
                    .or_insert_with(|| LaurentPoly::zero(&z_vars))
                    .add_term(z_part, c.clone());
            }
            by_t
        };
        let f_split: Vec<BTreeMap<ExpVec, LaurentPoly>> =
            piece.f_exprs.iter().map(&split).collect();
        let g_split = split(&piece.g_expr);
        for m in f_split.iter() {
            betas.extend(m.keys().cloned());
        }
        betas.extend(g_split.keys().cloned());
        for beta in betas {
            let row: Vec<LaurentPoly> = (0..rank)
                .map(|i| {
                    f_split[i]
                        .get(&beta)
                        .cloned()
                        .unwrap_or_else(|| LaurentPoly::zero(&z_vars))
                })
                .collect();
            let b = g_split
                .get(&beta)
                .cloned()
                .unwrap_or_else(|| LaurentPoly::zero(&z_vars));
            rows.push(row);
            rhs.push(b);
        }
    }
    SpanSystem { z_vars, rows, rhs }
}

// ---------------------------------------------------------------------------
// Span solving
// ---------------------------------------------------------------------------

fn subsets_by_size(r: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (0u32..(1 << r))
        .map(|mask| (0..r).filter(|&i| mask & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    subsets
}

/// Solve the span system over the function field of the stratum; on success
/// the solution minimizes the number of nonzero entries, ties broken by
/// lexicographically smallest support.
fn solve_span(system: &SpanSystem, rank: usize) -> Option<(Vec<RatFn>, bool)> {
    let full = poly_solve(&system.rows, &system.rhs);
    let uniform = match &full {
        PolySolve::Solved { monomial_pivots, .. } => *monomial_pivots,
        PolySolve::Inconsistent { .. } => return None,
    };
    let zero_fn = || RatFn::from_poly(LaurentPoly::zero(&system.z_vars));
    if rank <= 10 {
        for subset in subsets_by_size(rank) {
            let rows_sub: Vec<Vec<LaurentPoly>> = system
                .rows
                .iter()
                .map(|row| subset.iter().map(|&i| row[i].clone()).collect())
                .collect();
            if let PolySolve::Solved { solution, .. } = poly_solve(&rows_sub, &system.rhs) {
                let mut coeffs = vec![zero_fn(); rank];
                for (k, &i) in subset.iter().enumerate() {
                    coeffs[i] = solution[k].clone();
                }
                return Some((coeffs, uniform));
            }
        }
        unreachable!("full system solvable but no subset solution found");
    }
    match full {
        PolySolve::Solved { solution, .. } => Some((solution, uniform)),
        PolySolve::Inconsistent { .. } => None,
    }
}

/// Verify an InSpan solution symbolically: every equation of the system
/// holds in the function field.
pub fn verify_span_solution(system: &SpanSystem, coeffs: &[RatFn]) -> bool {
    for (row, b) in system.rows.iter().zip(&system.rhs) {
        let mut acc = RatFn::from_poly(LaurentPoly::zero(&system.z_vars));
        for (a, c) in row.iter().zip(coeffs) {
            if !a.is_zero() {
                acc = acc.add(&RatFn::from_poly(a.clone()).mul(c));
            }
        }
        let diff = acc.sub(&RatFn::from_poly(b.clone()));
        if !diff.is_zero() {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Point sampling and certificates
// ---------------------------------------------------------------------------

/// Deterministic sequence of nonzero parameter specializations, then seeded
/// random rationals.
fn z_candidates(dim: usize, seed: u64, tries: usize) -> Vec<Vec<Scalar>> {
    let mut out = Vec::new();
    if dim == 0 {
        out.push(Vec::new());
        return out;
    }
    out.push(vec![Scalar::from_int(1); dim]);
    for k in 0..dim {
        let mut v = vec![Scalar::from_int(1); dim];
        v[k] = Scalar::from_int(2);
        out.push(v);
    }
    out.push(vec![Scalar::from_int(2); dim]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    while out.len() < tries {
        let v: Vec<Scalar> = (0..dim)
            .map(|_| {
                let n = rng.gen_range(1..8i64);
                let s = if rng.gen_bool(0.5) { -1 } else { 1 };
                Scalar::from_int(n * s)
            })
            .collect();
        out.push(v);
    }
    out
}

/// Fiber sample point: a piece index with fiber torus values.
#[derive(Debug, Clone)]
struct Sample {
    piece: usize,
    t: Vec<Scalar>,
    f_vals: Vec<Scalar>,
    g_val: Scalar,
}

fn specialize_piece(piece: &FiberPiece, z: &[Scalar]) -> (Vec<LaurentPoly>, LaurentPoly) {
    // substitute z values, leaving t variables
    let t_vars: Vec<String> = piece.vars[piece.z_dim..].to_vec();
    let subst = |p: &LaurentPoly| -> LaurentPoly {
        let mut r = LaurentPoly::zero(&t_vars);
        for (e, c) in p.terms() {
            let mut coeff = c.clone();
            for (j, zv) in z.iter().enumerate() {
                let k = i64::try_from(&e.0[j]).expect("exponent range");
                let base = if k < 0 { zv.inv() } else { zv.clone() };
                for _ in 0..k.unsigned_abs() {
                    coeff = coeff.mul(&base);
                }
            }
            r.add_term(ExpVec(e.0[piece.z_dim..].to_vec()), coeff);
        }
        r
    };
    (piece.f_exprs.iter().map(&subst).collect(), subst(&piece.g_expr))
}

/// Function-space basis of the specialized generator expressions across all
/// pieces: returns (basis indices, dependencies expressing the others).
fn function_basis(
    spec: &[(Vec<LaurentPoly>, LaurentPoly)],
    rank: usize,
) -> (Vec<usize>, Vec<Dependency>) {
    // columns of the function matrix: (piece, t-monomial)
    let mut columns: Vec<(usize, ExpVec)> = Vec::new();
    for (pi, (fs, _)) in spec.iter().enumerate() {
        let mut monos: BTreeSet<ExpVec> = BTreeSet::new();
        for f in fs {
            monos.extend(f.terms().map(|(e, _)| e.clone()));
        }
        for m in monos {
            columns.push((pi, m));
        }
    }
    let row_of = |i: usize| -> Vec<Scalar> {
        columns
            .iter()
            .map(|(pi, m)| spec[*pi].0[i].coeff(m))
            .collect()
    };
    let mut basis: Vec<usize> = Vec::new();
    let mut basis_rows: Vec<Vec<Scalar>> = Vec::new();
    let mut dependencies = Vec::new();
    for i in 0..rank {
        let row = row_of(i);
        let mut mat = basis_rows.clone();
        mat.push(row.clone());
        if srank(&mat) > basis_rows.len() {
            basis.push(i);
            basis_rows.push(row);
        } else {
            // express row in the basis rows: solve basis_rows^T * mu = row
            let at: Vec<Vec<Scalar>> = (0..columns.len())
                .map(|c| basis_rows.iter().map(|r| r[c].clone()).collect())
            .collect();
            let mu = ssolve(&at, &row).expect("dependent row must be expressible");
            dependencies.push(Dependency { gen: i, coeffs: mu });
        }
    }
    (basis, dependencies)
}

/// Search a refuting point set: basis-sized prefix with invertible matrix
/// plus one more point making the candidate row independent.
fn find_certificate_points(
    pieces: &[FiberPiece],
    spec: &[(Vec<LaurentPoly>, LaurentPoly)],
    basis: &[usize],
) -> Option<(Vec<Sample>, Vec<Vec<Scalar>>, Scalar)> {
    let k = basis.len();
    // enumerate per-piece sample points: positive-dimensional pieces first
    // (pieces are already sorted that way), small integer tuples in order
    let mut samples: Vec<Sample> = Vec::new();
    for (pi, piece) in pieces.iter().enumerate() {
        let budget = 2 * (k + 2).max(4);
        let mut count = 0usize;
        let mut odo = vec![1i64; piece.t_dim];
        loop {
            let t: Vec<Scalar> = odo.iter().map(|&v| Scalar::from_int(v)).collect();
            let f_vals: Vec<Scalar> = spec[pi]
                .0
                .iter()
                .map(|f| f.eval(&t).expect("torus values nonzero"))
                .collect();
            let g_val = spec[pi].1.eval(&t).expect("torus values nonzero");
            samples.push(Sample { piece: pi, t, f_vals, g_val });
            count += 1;
            if piece.t_dim == 0 || count >= budget {
                break;
            }
            // odometer over positive integers 1..=budget
            let mut j = 0;
            loop {
                odo[j] += 1;
                if odo[j] <= budget as i64 {
                    break;
                }
                odo[j] = 1;
                j += 1;
                if j == piece.t_dim {
                    break;
                }
            }
            if odo.iter().all(|&v| v == 1) {
                break;
            }
        }
    }
    // greedy: first k samples whose basis-evaluation matrix is invertible
    let mut chosen: Vec<usize> = Vec::new();
    let mut rows_so_far: Vec<Vec<Scalar>> = Vec::new();
    for (si, s) in samples.iter().enumerate() {
        if chosen.len() == k {
            break;
        }
        let col: Vec<Scalar> = basis.iter().map(|&b| s.f_vals[b].clone()).collect();
        let mut mat = rows_so_far.clone();
        mat.push(col.clone());
        if srank(&mat) > rows_so_far.len() {
            chosen.push(si);
            rows_so_far.push(col);
        }
    }
    if chosen.len() < k {
        return None;
    }
    // one more point making the candidate row escape the span
    for (si, _) in samples.iter().enumerate() {
        if chosen.contains(&si) {
            continue;
        }
        let pts: Vec<usize> = chosen.iter().copied().chain(std::iter::once(si)).collect();
        // matrix rows: basis generators then candidate; columns: points
        let mut matrix: Vec<Vec<Scalar>> = basis
            .iter()
            .map(|&b| pts.iter().map(|&p| samples[p].f_vals[b].clone()).collect())
            .collect();
        matrix.push(pts.iter().map(|&p| samples[p].g_val.clone()).collect());
        let det = sdet(&matrix);
        if !det.is_zero() {
            let sel: Vec<Sample> = pts.into_iter().map(|p| samples[p].clone()).collect();
            return Some((sel, matrix, det));
        }
    }
    None
}

/// Per-fiber span test of a candidate over one X-orbit stratum, parametric
/// in the stratum coordinates, glued across all fiber pieces.
pub fn fiber_span_test(
    problem: &ToricProblem,
    g: &LaurentPoly,
    stratum: &BTreeSet<usize>,
    seed: u64,
) -> SpanResult {
    let rank = problem.atlas.ideal.rank();
    let pieces = fiber_pieces(problem, g, stratum);
    assert!(!pieces.is_empty(), "every X-orbit is dominated by a Y-orbit");
    let system = span_system(&pieces, rank);
    if let Some((coeffs, uniform)) = solve_span(&system, rank) {
        debug_assert!(verify_span_solution(&system, &coeffs));
        return SpanResult::InSpan { coeffs, uniform };
    }
    // refutation: specialize the stratum parameters and find points
    let n = problem.atlas.num_vars();
    let z_dim = pieces[0].z_dim;
    for z in z_candidates(z_dim, seed, 64) {
        let spec: Vec<(Vec<LaurentPoly>, LaurentPoly)> =
            pieces.iter().map(|p| specialize_piece(p, &z)).collect();
        // solvable at this specialization? then the refutation is not
        // visible here; try the next parameter point
        let (basis, dependencies) = function_basis(&spec, rank);
        if specialized_solvable(&spec, &basis) {
            continue;
        }
        if let Some((sel, matrix, det)) = find_certificate_points(&pieces, &spec, &basis) {
            // assemble the certificate
            let base: Vec<usize> = (0..n).filter(|j| !stratum.contains(j)).collect();
            let mut base_point = vec![Scalar::zero(); n];
            for (bi, &j) in base.iter().enumerate() {
                base_point[j] = z[bi].clone();
            }
            let points: Vec<CertPoint> = sel
                .iter()
                .map(|s| {
                    let piece = &pieces[s.piece];
                    let torus_vals = piece.param.point_from(&z, &s.t);
                    let chart = &problem.atlas.charts[piece.face.chart];
                    let coords: Vec<Scalar> = (0..chart.coords.len())
                        .map(|i| torus_vals.get(&i).cloned().unwrap_or_else(Scalar::zero))
                        .collect();
                    CertPoint { chart: piece.face.chart, coords }
                })
                .collect();
            let cert = WronskianCertificate {
                doc_type: "wronskian_certificate".into(),
                vars: problem.atlas.ideal.vars.clone(),
                ideal: problem.atlas.ideal.generator_strings(),
                candidate: format!("{}", g),
                stratum: stratum.iter().copied().collect(),
                base_point,
                points,
                basis,
                dependencies,
                matrix,
                det,
                seed,
            };
            debug_assert!(verify_certificate(&cert).is_ok(), "fresh certificate must verify");
            return SpanResult::NotInSpan { certificate: cert };
        }
    }
    panic!("refutation exists over the function field but no witness point set was found");
}

/// Exact solvability of the specialized fiber system.
fn specialized_solvable(spec: &[(Vec<LaurentPoly>, LaurentPoly)], basis: &[usize]) -> bool {
    // the candidate is in the span of all generators iff it is in the span
    // of the basis: compare function-space ranks
    let mut columns: Vec<(usize, ExpVec)> = Vec::new();
    for (pi, (fs, g)) in spec.iter().enumerate() {
        let mut monos: BTreeSet<ExpVec> = BTreeSet::new();
        for f in fs {
            monos.extend(f.terms().map(|(e, _)| e.clone()));
        }
        monos.extend(g.terms().map(|(e, _)| e.clone()));
        for m in monos {
            columns.push((pi, m));
        }
    }
    let mut rows: Vec<Vec<Scalar>> = basis
        .iter()
        .map(|&i| {
            columns
                .iter()
                .map(|(pi, m)| spec[*pi].0[i].coeff(m))
                .collect()
        })
        .collect();
    let k = srank(&rows);
    rows.push(columns.iter().map(|(pi, m)| spec[*pi].1.coeff(m)).collect());
    srank(&rows) == k
}

// ---------------------------------------------------------------------------
// Certificate verification
// ---------------------------------------------------------------------------

/// Re-verify a certificate from its serialized content alone: rebuild the
/// atlas, recompute the cleared evaluations at the stored points, check the
/// fiber condition, the dependencies, the matrix, and the determinant.
pub fn verify_certificate(cert: &WronskianCertificate) -> Result<(), String> {
    use crate::poly::{parse_poly, MonomialIdeal};
    let vars = cert.vars.clone();
    let ideal = MonomialIdeal::parse(&vars, &cert.ideal.join(","))
        .map_err(|e| format!("bad ideal: {}", e))?;
    let g = parse_poly(&cert.candidate, &vars).map_err(|e| format!("bad candidate: {}", e))?;
    let atlas = crate::newton::blowup_charts(&ideal).map_err(|e| format!("atlas: {}", e))?;
    let problem = ToricProblem {
        atlas,
        restriction: None,
        power: 1,
        factored_line: false,
        provenance: crate::descent::ScionTree::root("verify".into()),
    };
    let stratum: BTreeSet<usize> = cert.stratum.iter().copied().collect();
    // base point consistent with the stratum
    for (j, v) in cert.base_point.iter().enumerate() {
        let should_vanish = stratum.contains(&j);
        if should_vanish != v.is_zero() {
            return Err("base point does not lie on the declared stratum".into());
        }
    }
    let pieces = fiber_pieces(&problem, &g, &stratum);
    let n = problem.atlas.num_vars();
    let base: Vec<usize> = (0..n).filter(|j| !stratum.contains(j)).collect();
    let z: Vec<Scalar> = base.iter().map(|&j| cert.base_point[j].clone()).collect();
    let spec: Vec<(Vec<LaurentPoly>, LaurentPoly)> =
        pieces.iter().map(|p| specialize_piece(p, &z)).collect();

    // locate each point on a piece and recompute its evaluations
    let rank = ideal.rank();
    let mut f_rows: Vec<Vec<Scalar>> = vec![Vec::new(); rank];
    let mut g_row: Vec<Scalar> = Vec::new();
    for pt in &cert.points {
        if pt.chart >= problem.atlas.charts.len() {
            return Err("point chart out of range".into());
        }
        let chart = &problem.atlas.charts[pt.chart];
        if pt.coords.len() != chart.coords.len() {
            return Err("point coordinate count mismatch".into());
        }
        // the point's image must be the declared base point
        for j in 0..n {
            let mut img = Scalar::one();
            for (i, c) in pt.coords.iter().enumerate() {
                let k = i64::try_from(&chart.map_rows[j][i]).expect("range");
                if c.is_zero() {
                    if k > 0 {
                        img = Scalar::zero();
                        break;
                    } else if k < 0 {
                        return Err("point has a zero coordinate at negative exponent".into());
                    }
                } else {
                    let b = if k < 0 { c.inv() } else { c.clone() };
                    for _ in 0..k.unsigned_abs() {
                        img = img.mul(&b);
                    }
                }
            }
            if img != cert.base_point[j] {
                return Err("point does not lie over the declared base point".into());
            }
        }
        // find the piece with this zero pattern
        let zero: BTreeSet<usize> = (0..pt.coords.len())
            .filter(|&i| pt.coords[i].is_zero())
            .collect();
        let piece_idx = pieces
            .iter()
            .position(|p| {
                p.face.chart == pt.chart
                    && p.face.local_zero.iter().copied().collect::<BTreeSet<_>>() == zero
            })
            .ok_or_else(|| "no fiber piece matches the point's zero pattern".to_string())?;
        let piece = &pieces[piece_idx];
        // fiber coordinates of the point: invert the parametrization by
        // direct evaluation of the cleared expressions at the chart point
        let torus_vals: Vec<Scalar> = piece
            .param
            .torus_coords
            .iter()
            .map(|&i| pt.coords[i].clone())
            .collect();
        let eval_at = |p: &LaurentPoly| -> Result<Scalar, String> {
            // p lives in (z, t); evaluate via the original chart form:
            // reconstruct by evaluating the cleared chart expression at the
            // chart coordinates directly.
            let _ = p;
            unreachable!()
        };
        let _ = eval_at;
        // evaluate the cleared chart expressions directly in chart coords
        let chart_zero: BTreeSet<usize> = piece.face.local_zero.iter().copied().collect();
        let g_tilde = chart.section_expr(&g);
        let mins = g_tilde.min_exponents_on(&chart_zero);
        let mut delta = ExpVec::zeros(chart.coords.len());
        for (&i, m) in mins.iter() {
            if m < &BigInt::zero() {
                delta.0[i] = -m.clone();
            }
        }
        let clear = LaurentPoly::monomial(delta, Scalar::one(), &chart.coords);
        let g_cleared = g_tilde
            .mul(&clear)
            .restrict_zero(&chart_zero)
            .ok_or("candidate clearing failed")?;
        let full_coords = pt.coords.clone();
        let gv = g_cleared.eval(&full_coords).map_err(|e| format!("eval: {}", e))?;
        g_row.push(gv);
        for i in 0..rank {
            let fc = chart.f_tilde[i]
                .mul(&clear)
                .restrict_zero(&chart_zero)
                .ok_or("generator clearing failed")?;
            let fv = fc.eval(&full_coords).map_err(|e| format!("eval: {}", e))?;
            f_rows[i].push(fv);
        }
        let _ = torus_vals;
    }

    // dependencies: every non-basis generator covered, each identity holding
    // symbolically on every piece at the specialized parameters
    let covered: BTreeSet<usize> = cert
        .basis
        .iter()
        .copied()
        .chain(cert.dependencies.iter().map(|d| d.gen))
        .collect();
    if covered.len() != rank {
        return Err("basis and dependencies do not cover all generators".into());
    }
    for dep in &cert.dependencies {
        if dep.coeffs.len() != cert.basis.len() {
            return Err("dependency coefficient count mismatch".into());
        }
        for (fs, _) in &spec {
            let mut acc = LaurentPoly::zero(fs[0].vars());
            for (b, &bi) in cert.basis.iter().enumerate() {
                acc = acc.add(&fs[bi].scale(&dep.coeffs[b]));
            }
            if acc != fs[dep.gen] {
                return Err(format!(
                    "dependency for generator {} fails on a fiber piece",
                    dep.gen
                ));
            }
        }
    }

    // matrix: rows are the basis generator evaluations then the candidate
    let mut expect: Vec<Vec<Scalar>> = cert
        .basis
        .iter()
        .map(|&b| f_rows[b].clone())
        .collect();
    expect.push(g_row);
    if expect != cert.matrix {
        return Err("stored matrix does not match recomputed evaluations".into());
    }
    if cert.matrix.len() != cert.points.len() || cert.points.len() != cert.basis.len() + 1 {
        return Err("matrix shape mismatch".into());
    }
    let det = sdet(&cert.matrix);
    if det != cert.det {
        return Err("stored determinant does not recompute".into());
    }
    if det.is_zero() {
        return Err("determinant is zero; certificate refutes nothing".into());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// The plain Wronskian test on explicit functions
// ---------------------------------------------------------------------------

/// Outcome of the constant-coefficient span test for explicit functions.
#[derive(Debug, Clone)]
pub enum ConstSpan {
    InSpan(Vec<Scalar>),
    NotInSpan {
        /// Indices of the chosen evaluation points (columns).
        points: Vec<usize>,
        basis: Vec<usize>,
        matrix: Vec<Vec<Scalar>>,
        det: Scalar,
    },
}

/// Wronskian test for explicit value tables: `funcs[i][p]` is the value of
/// the i-th function at point p. Decides whether `phi` is a constant
/// combination, producing exact coefficients or a refuting point set of
/// size (basis + 1) with nonzero determinant.
pub fn wronskian_test_values(funcs: &[Vec<Scalar>], phi: &[Scalar]) -> ConstSpan {
    let npts = phi.len();
    // transpose: solve funcs^T c = phi
    let a: Vec<Vec<Scalar>> = (0..npts)
        .map(|p| funcs.iter().map(|f| f[p].clone()).collect())
        .collect();
    if let Some(c) = ssolve(&a, phi) {
        return ConstSpan::InSpan(c);
    }
    // independent basis of the functions
    let mut basis: Vec<usize> = Vec::new();
    let mut rows: Vec<Vec<Scalar>> = Vec::new();
    for (i, f) in funcs.iter().enumerate() {
        let mut m = rows.clone();
        m.push(f.clone());
        if srank(&m) > rows.len() {
            basis.push(i);
            rows.push(f.clone());
        }
    }
    let k = basis.len();
    // greedy points giving an invertible k x k basis matrix
    let mut chosen: Vec<usize> = Vec::new();
    let mut cols: Vec<Vec<Scalar>> = Vec::new();
    for p in 0..npts {
        if chosen.len() == k {
            break;
        }
        let col: Vec<Scalar> = basis.iter().map(|&b| funcs[b][p].clone()).collect();
        let mut m = cols.clone();
        m.push(col.clone());
        if srank(&m) > cols.len() {
            chosen.push(p);
            cols.push(col);
        }
    }
    for p in 0..npts {
        if chosen.contains(&p) {
            continue;
        }
        let pts: Vec<usize> = chosen.iter().copied().chain(std::iter::once(p)).collect();
        let mut matrix: Vec<Vec<Scalar>> = basis
            .iter()
            .map(|&b| pts.iter().map(|&q| funcs[b][q].clone()).collect())
            .collect();
        matrix.push(pts.iter().map(|&q| phi[q].clone()).collect());
        let det = sdet(&matrix);
        if !det.is_zero() {
            return ConstSpan::NotInSpan { points: pts, basis, matrix, det };
        }
    }
    unreachable!("inconsistent system must admit a refuting point set")
}

/// Symbolic Wronskian test on a torus domain: is `phi` a constant
/// combination of `funcs`? Exact coefficient matching decides; refutations
/// evaluate at small positive integer tuples.
pub fn wronskian_test(funcs: &[LaurentPoly], phi: &LaurentPoly) -> ConstSpan {
    // coefficient-matching system over the monomials
    let mut monos: BTreeSet<ExpVec> = BTreeSet::new();
    for f in funcs {
        monos.extend(f.terms().map(|(e, _)| e.clone()));
    }
    monos.extend(phi.terms().map(|(e, _)| e.clone()));
    let monos: Vec<ExpVec> = monos.into_iter().collect();
    let a: Vec<Vec<Scalar>> = monos
        .iter()
        .map(|m| funcs.iter().map(|f| f.coeff(m)).collect())
        .collect();
    let b: Vec<Scalar> = monos.iter().map(|m| phi.coeff(m)).collect();
    if let Some(c) = ssolve(&a, &b) {
        return ConstSpan::InSpan(c);
    }
    // sample points deterministically: t = 1, 2, 3, ... (tuples odometer)
    let dim = funcs.first().map(|f| f.vars().len()).unwrap_or(0);
    let budget = monos.len() + 2;
    let mut pts: Vec<Vec<Scalar>> = Vec::new();
    if dim == 0 {
        pts.push(Vec::new());
    } else {
        let mut odo = vec![1i64; dim];
        for _ in 0..budget * budget {
            pts.push(odo.iter().map(|&v| Scalar::from_int(v)).collect());
            let mut j = 0;
            loop {
                odo[j] += 1;
                if odo[j] <= budget as i64 {
                    break;
                }
                odo[j] = 1;
                j += 1;
                if j == dim {
                    break;
                }
            }
            if j_done(&odo, dim) {
                break;
            }
        }
    }
    let fvals: Vec<Vec<Scalar>> = funcs
        .iter()
        .map(|f| pts.iter().map(|p| f.eval(p).expect("positive point")).collect())
        .collect();
    let pvals: Vec<Scalar> = pts.iter().map(|p| phi.eval(p).expect("positive point")).collect();
    match wronskian_test_values(&fvals, &pvals) {
        ConstSpan::InSpan(_) => {
            // sampled points insufficient to separate; fall back to symbolic
            // verdict (cannot happen with budget >= monomial count)
            unreachable!("coefficient matching refuted but all samples agree")
        }
        refuted => refuted,
    }
}

fn j_done(odo: &[i64], dim: usize) -> bool {
    odo.iter().take(dim).all(|&v| v == 1)
}

// ---------------------------------------------------------------------------
// Stratified membership
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StratumReport {
    pub stratum: Vec<usize>,
    pub in_vanishing: bool,
    pub result: SpanResult,
}

/// Necessary membership condition: the per-fiber span test passes on every
/// X-orbit stratum.
pub fn sci0_membership(
    problem: &ToricProblem,
    g: &LaurentPoly,
    seed: u64,
) -> (bool, Vec<StratumReport>) {
    let mut reports = Vec::new();
    let mut member = true;
    for stratum in problem.atlas.x_strata() {
        let in_v = problem.atlas.ideal.orbit_in_vanishing(&stratum);
        let result = fiber_span_test(problem, g, &stratum, seed);
        if !result.is_in_span() {
            member = false;
        }
        reports.push(StratumReport {
            stratum: stratum.iter().copied().collect(),
            in_vanishing: in_v,
            result,
        });
    }
    (member, reports)
}

/// Brute-force solvability of one fiber of a finite model for a candidate
/// value assignment: rank comparison of the stacked system.
pub fn finite_fiber_solvable(model: &FiniteModel, base: usize, phi: &[Vec<Scalar>]) -> bool {
    let fiber = model.fiber(base);
    let mut rows: Vec<Vec<Scalar>> = Vec::new();
    let mut rhs: Vec<Scalar> = Vec::new();
    for (k, &y) in fiber.iter().enumerate() {
        for (r, row) in model.points[y].f.iter().enumerate() {
            rows.push(row.clone());
            rhs.push(phi[k][r].clone());
        }
    }
    ssolve(&rows, &rhs).is_some()
}
