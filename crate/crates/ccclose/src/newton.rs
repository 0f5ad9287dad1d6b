//! Toric model of the blow-up of a monomial ideal: Newton polyhedron,
//! normal fan with a deterministic unimodular refinement, affine charts with
//! monomial maps, the trivialization of the exceptional line bundle, and the
//! orbit stratification.

use crate::linalg::{idet, isolve, primitive, unimodular_right_inverse};
use crate::poly::{ExpVec, LaurentPoly, MonomialIdeal, PolyError, Scalar};
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use std::collections::{BTreeMap, BTreeSet};

/// Newton polyhedron of a monomial ideal: convex hull of the generator
/// exponents plus the nonnegative orthant (recession cone, implicit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewtonPolyhedron {
    pub dim: usize,
    pub vertices: Vec<ExpVec>,
}

/// Complete fan in the nonnegative orthant with unimodular maximal cones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fan {
    /// Primitive ray generators, sorted graded-lexicographically.
    pub rays: Vec<Vec<BigInt>>,
    /// Maximal cones as sorted ray-index lists.
    pub max_cones: Vec<Vec<usize>>,
}

/// Affine chart of the toric blow-up attached to one maximal cone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chart {
    pub id: usize,
    /// Global ray indices spanning the cone, in local coordinate order.
    pub ray_ids: Vec<usize>,
    /// Fresh chart coordinates u1..un.
    pub coords: Vec<String>,
    /// Monomial map to X: x_j pulls back to u^{map_rows[j]}.
    pub map_rows: Vec<Vec<BigInt>>,
    /// Vertex of the Newton polyhedron selected by this cone.
    pub e_generator: ExpVec,
    /// Chart expressions of the presented generators: pullback(f_i) divided
    /// by the chart generator of the exceptional line bundle.
    pub f_tilde: Vec<LaurentPoly>,
}

impl Chart {
    /// Pull a polynomial on X back along the chart's monomial map.
    pub fn pullback(&self, p: &LaurentPoly) -> LaurentPoly {
        // exp_map wants one row per target coordinate u_i; map_rows is
        // stored with one row per X coordinate, so transpose.
        let n = self.coords.len();
        let rows: Vec<Vec<BigInt>> = (0..n)
            .map(|i| self.map_rows.iter().map(|r| r[i].clone()).collect())
            .collect();
        p.exp_map(&rows, &self.coords)
    }

    /// Chart expression of a candidate as a section of the exceptional line
    /// bundle: pullback divided by the chart generator monomial.
    pub fn section_expr(&self, p: &LaurentPoly) -> LaurentPoly {
        let m = self.pullback_exponent(&self.e_generator);
        self.pullback(p).monomial_divide(&m)
    }

    /// Exponent vector of the pullback of the monomial x^a.
    pub fn pullback_exponent(&self, a: &ExpVec) -> ExpVec {
        ExpVec(
            (0..self.coords.len())
                .map(|i| {
                    // exponent of u_i = <a, w_i>
                    self.map_rows
                        .iter()
                        .enumerate()
                        .map(|(j, row)| &row[i] * &a.0[j])
                        .sum()
                })
                .collect(),
        )
    }

    /// Ray vector for local coordinate `i`.
    pub fn ray(&self, fan: &Fan, i: usize) -> Vec<BigInt> {
        fan.rays[self.ray_ids[i]].clone()
    }
}

/// The full chart atlas of the blow-up, presented torically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChartAtlas {
    pub ideal: MonomialIdeal,
    pub fan: Fan,
    pub charts: Vec<Chart>,
}

/// One torus-orbit stratum of a chart with its image orbit on X.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratum {
    pub chart: usize,
    /// Local coordinate indices set to zero.
    pub zero_set: Vec<usize>,
    /// Remaining (nonzero) local coordinates.
    pub torus_coords: Vec<usize>,
    /// X-side coordinates that vanish on the image orbit.
    pub image_stratum: Vec<usize>,
    /// True when the image orbit lies in V(I).
    pub exceptional: bool,
}

/// A face of the fan, identified by its global ray set; the canonical
/// container chart is the lowest-id maximal cone containing it. Faces are
/// in bijection with the torus orbits of the blow-up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Face {
    pub rays: Vec<usize>,
    pub chart: usize,
    /// Local coordinates of `chart` that vanish on the orbit.
    pub local_zero: Vec<usize>,
    /// X-coordinates vanishing on the image orbit.
    pub image_stratum: BTreeSet<usize>,
}

// ---------------------------------------------------------------------------
// Newton polyhedron
// ---------------------------------------------------------------------------

/// Vertices of the Newton polyhedron: generators whose normal cone is
/// full-dimensional, equivalently generators not contained in the convex
/// hull of the other generators plus the orthant.
pub fn newton_polyhedron(ideal: &MonomialIdeal) -> Result<NewtonPolyhedron, PolyError> {
    if ideal.is_zero() {
        return Err(PolyError::ZeroIdeal);
    }
    let n = ideal.num_vars();
    let mut vertices = Vec::new();
    for a in &ideal.gens {
        let ineqs: Vec<Vec<BigInt>> = ideal
            .gens
            .iter()
            .filter(|b| *b != a)
            .map(|b| b.sub(a).0)
            .collect();
        let rays = cone_from_halfspaces(n, &ineqs);
        if cone_dim(n, &rays) == n {
            vertices.push(a.clone());
        }
    }
    vertices.sort();
    Ok(NewtonPolyhedron { dim: n, vertices })
}

fn cone_dim(n: usize, rays: &[Vec<BigInt>]) -> usize {
    if rays.is_empty() {
        return 0;
    }
    // Rank of the ray matrix; the cones here are pointed, so rank = dim.
    let mut m: Vec<Vec<BigInt>> = rays.to_vec();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..n {
        let Some(p) = (row..m.len()).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        for r in row + 1..m.len() {
            if !m[r][col].is_zero() {
                let a = m[row][col].clone();
                let b = m[r][col].clone();
                for c in 0..n {
                    m[r][c] = &m[r][c] * &a - &m[row][c] * &b;
                }
            }
        }
        rank += 1;
        row += 1;
        if row == m.len() {
            break;
        }
    }
    rank
}

// ---------------------------------------------------------------------------
// Double description: extreme rays of {w >= 0, <m_k, w> >= 0 for all k}.
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct DDRay {
    v: Vec<BigInt>,
    /// Indices of active constraints: 0..n are the coordinate hyperplanes,
    /// n+k is the k-th added inequality.
    active: BTreeSet<usize>,
}

pub fn cone_from_halfspaces(n: usize, ineqs: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let mut rays: Vec<DDRay> = (0..n)
        .map(|i| {
            let mut v = vec![BigInt::zero(); n];
            v[i] = BigInt::one();
            let active: BTreeSet<usize> = (0..n).filter(|&j| j != i).collect();
            DDRay { v, active }
        })
        .collect();
    let dot = |m: &[BigInt], v: &[BigInt]| -> BigInt { m.iter().zip(v).map(|(a, b)| a * b).sum() };
    for (k, m) in ineqs.iter().enumerate() {
        let cid = n + k;
        let signs: Vec<BigInt> = rays.iter().map(|r| dot(m, &r.v)).collect();
        let mut next: Vec<DDRay> = Vec::new();
        for (r, s) in rays.iter().zip(&signs) {
            if !s.is_negative() {
                let mut nr = r.clone();
                if s.is_zero() {
                    nr.active.insert(cid);
                }
                next.push(nr);
            }
        }
        for (pi, p) in rays.iter().enumerate() {
            if !signs[pi].is_positive() {
                continue;
            }
            for (qi, q) in rays.iter().enumerate() {
                if !signs[qi].is_negative() {
                    continue;
                }
                if !dd_adjacent(n, ineqs, p, q) {
                    continue;
                }
                // combination lands on the new hyperplane
                let sp = &signs[pi];
                let sq = &signs[qi];
                let v: Vec<BigInt> = p
                    .v
                    .iter()
                    .zip(&q.v)
                    .map(|(a, b)| a * (-sq.clone()) + b * sp.clone())
                    .collect();
                let v = primitive(&v);
                let mut active: BTreeSet<usize> =
                    p.active.intersection(&q.active).cloned().collect();
                active.insert(cid);
                if !next.iter().any(|r| r.v == v) {
                    next.push(DDRay { v, active });
                }
            }
        }
        rays = next;
    }
    let mut out: Vec<Vec<BigInt>> = rays.into_iter().map(|r| r.v).collect();
    out.sort_by(|a, b| grlex_vec(a, b));
    out.dedup();
    out
}

fn dd_adjacent(n: usize, ineqs: &[Vec<BigInt>], p: &DDRay, q: &DDRay) -> bool {
    let common: Vec<usize> = p.active.intersection(&q.active).cloned().collect();
    if n <= 2 {
        return true;
    }
    // rank of the common active constraint normals must be n-2
    let mut normals: Vec<Vec<BigInt>> = Vec::new();
    for &c in &common {
        if c < n {
            let mut e = vec![BigInt::zero(); n];
            e[c] = BigInt::one();
            normals.push(e);
        } else {
            normals.push(ineqs[c - n].clone());
        }
    }
    rank_int(&normals, n) >= n - 2
}

fn rank_int(rows: &[Vec<BigInt>], n: usize) -> usize {
    let mut m: Vec<Vec<BigInt>> = rows.to_vec();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..n {
        let Some(p) = (row..m.len()).find(|&r| !m[r][col].is_zero()) else { continue };
        m.swap(row, p);
        for r in row + 1..m.len() {
            if !m[r][col].is_zero() {
                let a = m[row][col].clone();
                let b = m[r][col].clone();
                for c in 0..n {
                    m[r][c] = &m[r][c] * &a - &m[row][c] * &b;
                }
            }
        }
        rank += 1;
        row += 1;
        if row == m.len() {
            break;
        }
    }
    rank
}

pub fn grlex_vec(a: &[BigInt], b: &[BigInt]) -> std::cmp::Ordering {
    let ta: BigInt = a.iter().sum();
    let tb: BigInt = b.iter().sum();
    ta.cmp(&tb).then_with(|| a.cmp(b))
}

// ---------------------------------------------------------------------------
// Normal fan with unimodular refinement
// ---------------------------------------------------------------------------

/// Normal fan of the Newton polyhedron, refined deterministically into
/// unimodular cones (fan triangulation, then stellar subdivision at
/// graded-lex-minimal parallelepiped points).
pub fn normal_fan(p: &NewtonPolyhedron) -> Fan {
    let n = p.dim;
    // Normal cone of each vertex.
    let mut cones_rays: Vec<Vec<Vec<BigInt>>> = Vec::new();
    for a in &p.vertices {
        let ineqs: Vec<Vec<BigInt>> = p
            .vertices
            .iter()
            .filter(|b| *b != a)
            .map(|b| b.sub(a).0)
            .collect();
        cones_rays.push(cone_from_halfspaces(n, &ineqs));
    }
    // Global ray table.
    let mut rays: Vec<Vec<BigInt>> = Vec::new();
    let mut cones: Vec<Vec<usize>> = Vec::new();
    for cr in &cones_rays {
        let mut ids = Vec::new();
        for r in cr {
            let id = match rays.iter().position(|x| x == r) {
                Some(i) => i,
                None => {
                    rays.push(r.clone());
                    rays.len() - 1
                }
            };
            ids.push(id);
        }
        ids.sort_unstable();
        cones.push(ids);
    }
    let mut fan = Fan { rays, max_cones: cones };
    triangulate(&mut fan, n);
    unimodularize(&mut fan, n);
    canonicalize(&mut fan);
    fan
}

/// Fan-triangulate every non-simplicial maximal cone from its graded-lex
/// smallest ray. Only needed in dimension 3.
fn triangulate(fan: &mut Fan, n: usize) {
    if n < 3 {
        return;
    }
    let mut out: Vec<Vec<usize>> = Vec::new();
    for cone in &fan.max_cones {
        if cone.len() <= n {
            out.push(cone.clone());
            continue;
        }
        // Order the rays of the 3-cone in a boundary cycle using 2-face
        // adjacency, then fan out from the graded-lex smallest ray.
        let cycle = boundary_cycle(fan, cone);
        let apex_pos = (0..cycle.len())
            .min_by(|&a, &b| grlex_vec(&fan.rays[cycle[a]], &fan.rays[cycle[b]]))
            .unwrap();
        let k = cycle.len();
        for i in 0..k {
            let a = cycle[(apex_pos + i) % k];
            let b = cycle[(apex_pos + i + 1) % k];
            if a == cycle[apex_pos] || b == cycle[apex_pos] {
                continue;
            }
            let mut c = vec![cycle[apex_pos], a, b];
            c.sort_unstable();
            out.push(c);
        }
    }
    fan.max_cones = out;
}

/// Boundary cycle of a full-dimensional pointed 3-cone: each extreme ray is
/// adjacent to exactly two others along 2-faces.
fn boundary_cycle(fan: &Fan, cone: &[usize]) -> Vec<usize> {
    let k = cone.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..k {
        for j in i + 1..k {
            if two_face(fan, cone, cone[i], cone[j]) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in &adj {
        assert_eq!(a.len(), 2, "boundary of 3-cone is not a cycle");
    }
    let mut cycle = vec![0usize];
    let mut prev = usize::MAX;
    while cycle.len() < k {
        let cur = *cycle.last().unwrap();
        let next = if adj[cur][0] != prev { adj[cur][0] } else { adj[cur][1] };
        prev = cur;
        cycle.push(next);
    }
    cycle.into_iter().map(|i| cone[i]).collect()
}

/// Do rays a,b span a 2-face of the cone? True iff some supporting
/// hyperplane of the cone vanishes exactly on them among the cone's rays.
fn two_face(fan: &Fan, cone: &[usize], a: usize, b: usize) -> bool {
    // The pair spans a face iff no other ray of the cone is a nonnegative
    // combination restricted to the plane span(a,b) ... for pointed cones a
    // cheaper criterion: the rank-2 subspace through a,b supports the cone:
    // there is a linear functional zero on a,b and nonnegative (or
    // nonpositive) on all other rays, with at least one side strict.
    let n = fan.rays[a].len();
    assert_eq!(n, 3);
    let cross = |u: &[BigInt], v: &[BigInt]| -> Vec<BigInt> {
        vec![
            &u[1] * &v[2] - &u[2] * &v[1],
            &u[2] * &v[0] - &u[0] * &v[2],
            &u[0] * &v[1] - &u[1] * &v[0],
        ]
    };
    let m = cross(&fan.rays[a], &fan.rays[b]);
    if m.iter().all(|x| x.is_zero()) {
        return false;
    }
    let mut pos = false;
    let mut neg = false;
    for &r in cone {
        if r == a || r == b {
            continue;
        }
        let d: BigInt = m.iter().zip(&fan.rays[r]).map(|(x, y)| x * y).sum();
        if d.is_positive() {
            pos = true;
        } else if d.is_negative() {
            neg = true;
        } else {
            return false; // third ray on the plane: not a 2-face of the cycle
        }
    }
    !(pos && neg)
}

fn cone_matrix(fan: &Fan, cone: &[usize]) -> Vec<Vec<BigInt>> {
    let n = fan.rays[cone[0]].len();
    // columns are rays
    (0..n)
        .map(|j| cone.iter().map(|&r| fan.rays[r][j].clone()).collect())
        .collect()
}

fn cone_multiplicity(fan: &Fan, cone: &[usize]) -> BigInt {
    idet(&cone_matrix(fan, cone)).abs()
}

/// Membership of an integer vector in a simplicial cone, with the
/// barycentric coordinates (numerators and positive denominator).
fn cone_coords(fan: &Fan, cone: &[usize], w: &[BigInt]) -> Option<(Vec<BigInt>, BigInt)> {
    let m = cone_matrix(fan, cone);
    let (mut xs, mut d) = isolve(&m, w)?;
    if d.is_negative() {
        for x in xs.iter_mut() {
            *x = -x.clone();
        }
        d = -d;
    }
    Some((xs, d))
}

fn cone_contains(fan: &Fan, cone: &[usize], w: &[BigInt]) -> bool {
    match cone_coords(fan, cone, w) {
        Some((xs, _)) => xs.iter().all(|x| !x.is_negative()),
        None => false,
    }
}

/// Stellar subdivision until every maximal cone is unimodular. The
/// subdivision point is always the graded-lex smallest primitive lattice
/// point of the fundamental parallelepiped of the first bad cone.
fn unimodularize(fan: &mut Fan, n: usize) {
    loop {
        let bad = fan
            .max_cones
            .iter()
            .position(|c| cone_multiplicity(fan, c) > BigInt::one());
        let Some(bad) = bad else { break };
        let p = parallelepiped_point(fan, &fan.max_cones[bad].clone(), n);
        let p = primitive(&p);
        let pid = match fan.rays.iter().position(|r| *r == p) {
            Some(i) => i,
            None => {
                fan.rays.push(p.clone());
                fan.rays.len() - 1
            }
        };
        let mut out: Vec<Vec<usize>> = Vec::new();
        for cone in &fan.max_cones {
            if !cone_contains(fan, cone, &p) || cone.contains(&pid) {
                out.push(cone.clone());
                continue;
            }
            let (lambda, _) = cone_coords(fan, cone, &p).unwrap();
            for (i, l) in lambda.iter().enumerate() {
                if l.is_positive() {
                    let mut c: Vec<usize> =
                        cone.iter().copied().filter(|&r| r != cone[i]).collect();
                    c.push(pid);
                    c.sort_unstable();
                    out.push(c);
                }
            }
        }
        fan.max_cones = out;
    }
}

/// Smallest (graded-lex) nonzero integer point of the half-open fundamental
/// parallelepiped of a simplicial cone that is not on a ray.
fn parallelepiped_point(fan: &Fan, cone: &[usize], n: usize) -> Vec<BigInt> {
    let mut bound = vec![BigInt::zero(); n];
    for &r in cone {
        for j in 0..n {
            bound[j] += &fan.rays[r][j];
        }
    }
    let mut best: Option<Vec<BigInt>> = None;
    let mut cursor = vec![BigInt::zero(); n];
    loop {
        // iterate the integer box [0, bound] in odometer order
        let candidate = cursor.clone();
        let mut j = 0;
        loop {
            if j == n {
                break;
            }
            cursor[j] += 1;
            if cursor[j] <= bound[j] {
                break;
            }
            cursor[j] = BigInt::zero();
            j += 1;
        }
        let done = j == n;
        if candidate.iter().any(|x| !x.is_zero()) {
            if let Some((lambda, d)) = cone_coords(fan, cone, &candidate) {
                let in_halfopen = lambda.iter().all(|l| !l.is_negative() && l < &d);
                let on_ray = lambda.iter().filter(|l| l.is_positive()).count() <= 1;
                if in_halfopen && !on_ray {
                    let better = match &best {
                        None => true,
                        Some(b) => grlex_vec(&candidate, b) == std::cmp::Ordering::Less,
                    };
                    if better {
                        best = Some(candidate);
                    }
                }
            }
        }
        if done {
            break;
        }
    }
    best.expect("non-unimodular cone must contain a parallelepiped point")
}

/// Sort rays graded-lexicographically and re-index cones.
fn canonicalize(fan: &mut Fan) {
    let mut order: Vec<usize> = (0..fan.rays.len()).collect();
    order.sort_by(|&a, &b| grlex_vec(&fan.rays[a], &fan.rays[b]));
    let mut newpos = vec![0usize; fan.rays.len()];
    for (new, &old) in order.iter().enumerate() {
        newpos[old] = new;
    }
    fan.rays = order.iter().map(|&o| fan.rays[o].clone()).collect();
    for c in fan.max_cones.iter_mut() {
        for r in c.iter_mut() {
            *r = newpos[*r];
        }
        c.sort_unstable();
    }
    fan.max_cones.sort();
    fan.max_cones.dedup();
}

// ---------------------------------------------------------------------------
// Charts and strata
// ---------------------------------------------------------------------------

pub fn blowup_charts(ideal: &MonomialIdeal) -> Result<ChartAtlas, PolyError> {
    let np = newton_polyhedron(ideal)?;
    let fan = normal_fan(&np);
    rebuild_charts(ideal, fan)
}

impl ChartAtlas {
    pub fn num_vars(&self) -> usize {
        self.ideal.num_vars()
    }

    /// All faces of the fan, each assigned to its lowest-id containing
    /// chart. Faces correspond to the torus orbits of the blow-up.
    pub fn faces(&self) -> Vec<Face> {
        let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
        let mut out = Vec::new();
        for chart in &self.charts {
            let k = chart.ray_ids.len();
            for mask in 0..(1u32 << k) {
                let mut rays: Vec<usize> = Vec::new();
                let mut local_zero = Vec::new();
                for i in 0..k {
                    if mask & (1 << i) != 0 {
                        rays.push(chart.ray_ids[i]);
                        local_zero.push(i);
                    }
                }
                rays.sort_unstable();
                if !seen.insert(rays.clone()) {
                    continue;
                }
                let mut image = BTreeSet::new();
                for &r in &rays {
                    for (j, x) in self.fan.rays[r].iter().enumerate() {
                        if x.is_positive() {
                            image.insert(j);
                        }
                    }
                }
                out.push(Face {
                    rays,
                    chart: chart.id,
                    local_zero,
                    image_stratum: image,
                });
            }
        }
        out.sort_by(|a, b| a.rays.len().cmp(&b.rays.len()).then(a.rays.cmp(&b.rays)));
        out
    }

    /// Faces whose image orbit is exactly the given X-orbit.
    pub fn faces_over(&self, zero: &BTreeSet<usize>) -> Vec<Face> {
        self.faces()
            .into_iter()
            .filter(|f| &f.image_stratum == zero)
            .collect()
    }

    /// All X-orbit strata (subsets of coordinates), sorted by increasing
    /// codimension then lexicographically.
    pub fn x_strata(&self) -> Vec<BTreeSet<usize>> {
        let n = self.num_vars();
        let mut out: Vec<BTreeSet<usize>> = (0..(1u32 << n))
            .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
            .collect();
        out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        out
    }
}

/// Complete per-chart stratification with exceptional flags.
pub fn exceptional_strata(atlas: &ChartAtlas) -> Vec<Stratum> {
    let mut out = Vec::new();
    for chart in &atlas.charts {
        let k = chart.ray_ids.len();
        for mask in 0..(1u32 << k) {
            let mut zero_set = Vec::new();
            let mut torus = Vec::new();
            let mut image = BTreeSet::new();
            for i in 0..k {
                if mask & (1 << i) != 0 {
                    zero_set.push(i);
                    let r = chart.ray_ids[i];
                    for (j, x) in atlas.fan.rays[r].iter().enumerate() {
                        if x.is_positive() {
                            image.insert(j);
                        }
                    }
                } else {
                    torus.push(i);
                }
            }
            let exceptional = atlas.ideal.orbit_in_vanishing(&image);
            out.push(Stratum {
                chart: chart.id,
                zero_set,
                torus_coords: torus,
                image_stratum: image.into_iter().collect(),
                exceptional,
            });
        }
    }
    out
}

/// Parametrization of the fibers of one face over its image orbit.
///
/// Writing T for the nonvanishing X-coordinates and T_u for the
/// nonvanishing chart coordinates, the monomial map induces a surjective
/// integer matrix A: Z^{T_u} -> Z^T. A unimodular change of coordinates
/// splits the orbit torus into base coordinates (mapping to the stratum
/// parameters) and free fiber coordinates.
#[derive(Debug, Clone)]
pub struct FiberParam {
    /// Nonvanishing chart coordinates, in local order.
    pub torus_coords: Vec<usize>,
    /// Nonvanishing X-coordinates (the stratum parameters), sorted.
    pub base_coords: Vec<usize>,
    /// Unimodular matrix W with A·W = [I | 0]; columns `0..base` express
    /// base directions, the rest are fiber directions.
    pub w: Vec<Vec<BigInt>>,
    pub fiber_dim: usize,
}

impl FiberParam {
    /// Exponent of (z, t) coordinates for a torus monomial `u^e` restricted
    /// to the orbit: returns (base exponents, fiber exponents).
    pub fn split_exponent(&self, e: &ExpVec) -> (Vec<BigInt>, Vec<BigInt>) {
        // u_i = prod_j v_j^{W[i][j]}  =>  exponent in v = W^T e
        let cols = self.w.len();
        let base = self.base_coords.len();
        let mut v = vec![BigInt::zero(); cols];
        for (row_idx, &tc) in self.torus_coords.iter().enumerate() {
            let _ = tc;
            for j in 0..cols {
                v[j] += &self.w[row_idx][j] * &e.0[self.torus_coords[row_idx]];
            }
        }
        (v[..base].to_vec(), v[base..].to_vec())
    }

    /// Chart coordinates of a fiber point over base values `z` with fiber
    /// torus values `t` (all nonzero). Zeroed coordinates are not included.
    pub fn point_from(&self, z: &[Scalar], t: &[Scalar]) -> BTreeMap<usize, Scalar> {
        let mut out = BTreeMap::new();
        for (row_idx, &u_i) in self.torus_coords.iter().enumerate() {
            let mut val = Scalar::one();
            for (j, zv) in z.iter().enumerate() {
                val = val.mul(&int_pow(zv, &self.w[row_idx][j]));
            }
            for (j, tv) in t.iter().enumerate() {
                val = val.mul(&int_pow(tv, &self.w[row_idx][self.base_coords.len() + j]));
            }
            out.insert(u_i, val);
        }
        out
    }
}

fn int_pow(base: &Scalar, e: &BigInt) -> Scalar {
    let k = i64::try_from(e).expect("exponent range");
    let b = if k < 0 { base.inv() } else { base.clone() };
    let mut acc = Scalar::one();
    for _ in 0..k.unsigned_abs() {
        acc = acc.mul(&b);
    }
    acc
}

/// Stellar refinement of an atlas at a primitive lattice point of the
/// orthant: subdivides every maximal cone containing the point and rebuilds
/// the charts. Errors when the point is not in the support of the fan.
pub fn refine_at(atlas: &ChartAtlas, p: &[BigInt]) -> Result<ChartAtlas, String> {
    if p.iter().all(|x| x.is_zero()) || p.iter().any(|x| x.is_negative()) {
        return Err("refinement point must be a nonzero orthant vector".to_string());
    }
    let p = primitive(p);
    let mut fan = atlas.fan.clone();
    if !fan.max_cones.iter().any(|c| cone_contains(&fan, c, &p)) {
        return Err("refinement point not in the fan support".to_string());
    }
    let pid = match fan.rays.iter().position(|r| *r == p) {
        Some(i) => i,
        None => {
            fan.rays.push(p.clone());
            fan.rays.len() - 1
        }
    };
    let mut out: Vec<Vec<usize>> = Vec::new();
    for cone in &fan.max_cones {
        if !cone_contains(&fan, cone, &p) || cone.contains(&pid) {
            out.push(cone.clone());
            continue;
        }
        let (lambda, _) = cone_coords(&fan, cone, &p).unwrap();
        for (i, l) in lambda.iter().enumerate() {
            if l.is_positive() {
                let mut c: Vec<usize> = cone.iter().copied().filter(|&r| r != cone[i]).collect();
                c.push(pid);
                c.sort_unstable();
                out.push(c);
            }
        }
    }
    fan.max_cones = out;
    unimodularize(&mut fan, atlas.num_vars());
    canonicalize(&mut fan);
    rebuild_charts(&atlas.ideal, fan)
        .map_err(|e| format!("chart rebuild failed: {}", e))
}

fn rebuild_charts(ideal: &MonomialIdeal, fan: Fan) -> Result<ChartAtlas, PolyError> {
    let np = newton_polyhedron(ideal)?;
    let n = ideal.num_vars();
    let coords: Vec<String> = (1..=n).map(|i| format!("u{}", i)).collect();
    let mut charts = Vec::new();
    for (id, cone) in fan.max_cones.iter().enumerate() {
        let map_rows: Vec<Vec<BigInt>> = (0..n)
            .map(|j| cone.iter().map(|&r| fan.rays[r][j].clone()).collect())
            .collect();
        let vertex = np
            .vertices
            .iter()
            .find(|a| {
                np.vertices.iter().all(|b| {
                    cone.iter().all(|&r| {
                        let wa: BigInt = fan.rays[r].iter().zip(&a.0).map(|(x, y)| x * y).sum();
                        let wb: BigInt = fan.rays[r].iter().zip(&b.0).map(|(x, y)| x * y).sum();
                        wa <= wb
                    })
                })
            })
            .expect("refined cone lies in some vertex normal cone")
            .clone();
        let mut chart = Chart {
            id,
            ray_ids: cone.clone(),
            coords: coords.clone(),
            map_rows,
            e_generator: vertex,
            f_tilde: Vec::new(),
        };
        let m = chart.pullback_exponent(&chart.e_generator);
        chart.f_tilde = ideal
            .presented
            .iter()
            .map(|a| {
                let e = chart.pullback_exponent(a).sub(&m);
                assert!(e.is_nonneg(), "chart expression must be regular");
                LaurentPoly::monomial(e, Scalar::one(), &coords)
            })
            .collect();
        charts.push(chart);
    }
    Ok(ChartAtlas { ideal: ideal.clone(), fan, charts })
}

/// Build the fiber parametrization of a face over its image orbit.
pub fn fiber_param(atlas: &ChartAtlas, face: &Face) -> FiberParam {
    let chart = &atlas.charts[face.chart];
    let n = atlas.num_vars();
    let torus_coords: Vec<usize> = (0..chart.ray_ids.len())
        .filter(|i| !face.local_zero.contains(i))
        .collect();
    let base_coords: Vec<usize> = (0..n).filter(|j| !face.image_stratum.contains(j)).collect();
    // A[j][i] = (w_i)_j for j in base_coords, i in torus_coords
    let a: Vec<Vec<BigInt>> = base_coords
        .iter()
        .map(|&j| {
            torus_coords
                .iter()
                .map(|&i| atlas.fan.rays[chart.ray_ids[i]][j].clone())
                .collect()
        })
        .collect();
    let w = if base_coords.is_empty() {
        // identity: all torus coordinates are fiber coordinates
        (0..torus_coords.len())
            .map(|i| {
                (0..torus_coords.len())
                    .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                    .collect()
            })
            .collect()
    } else {
        unimodular_right_inverse(&a)
    };
    let fiber_dim = torus_coords.len() - base_coords.len();
    FiberParam { torus_coords, base_coords, w, fiber_dim }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{parse_poly, vars_of};
    use rand::{Rng, SeedableRng};

    fn ideal2(gens: &str) -> MonomialIdeal {
        MonomialIdeal::parse(&vars_of(&["x", "y"]), gens).unwrap()
    }

    fn ideal3(gens: &str) -> MonomialIdeal {
        MonomialIdeal::parse(&vars_of(&["x", "y", "z"]), gens).unwrap()
    }

    #[test]
    fn newton_polyhedron_examples() {
        let np = newton_polyhedron(&ideal2("x^3, y^3")).unwrap();
        assert_eq!(
            np.vertices,
            vec![ExpVec::from_i64s(&[0, 3]), ExpVec::from_i64s(&[3, 0])]
        );

        let i1 = MonomialIdeal::parse(&vars_of(&["x"]), "x").unwrap();
        let np = newton_polyhedron(&i1).unwrap();
        assert_eq!(np.vertices, vec![ExpVec::from_i64s(&[1])]);

        // (1,1,1) lies in conv{(2,0,0),(0,2,0)} + orthant, so the Newton
        // polyhedron of (x^2, y^2, xyz) has just the two square vertices.
        let np = newton_polyhedron(&ideal3("x^2, y^2, x*y*z")).unwrap();
        assert_eq!(
            np.vertices,
            vec![ExpVec::from_i64s(&[0, 2, 0]), ExpVec::from_i64s(&[2, 0, 0])]
        );

        // A genuinely 3-vertex example in 3 variables.
        let np = newton_polyhedron(&ideal3("x^2, y^2, z^2")).unwrap();
        assert_eq!(np.vertices.len(), 3);
    }

    #[test]
    fn normal_fan_examples() {
        let np = newton_polyhedron(&ideal2("x^3, y^3")).unwrap();
        let fan = normal_fan(&np);
        let rays: Vec<Vec<i64>> = fan
            .rays
            .iter()
            .map(|r| r.iter().map(|x| i64::try_from(x).unwrap()).collect())
            .collect();
        assert_eq!(rays, vec![vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(fan.max_cones.len(), 2);

        let i1 = MonomialIdeal::parse(&vars_of(&["x"]), "x^2").unwrap();
        let fan = normal_fan(&newton_polyhedron(&i1).unwrap());
        assert_eq!(fan.max_cones, vec![vec![0]]);

        let np = newton_polyhedron(&ideal2("x^2, y^2")).unwrap();
        let fan = normal_fan(&np);
        assert_eq!(fan.rays.len(), 3);
    }

    #[test]
    fn all_max_cones_unimodular() {
        for ideal in [
            ideal2("x^3, y^3"),
            ideal2("x^2, y^2"),
            ideal3("x^2, y^2, x*y*z"),
            ideal3("x^2, y^2, z^2"),
            ideal3("x^3, y^2, z^4"),
            ideal2("x^4*y, x*y^4"),
        ] {
            let fan = normal_fan(&newton_polyhedron(&ideal).unwrap());
            for cone in &fan.max_cones {
                assert_eq!(cone.len(), ideal.num_vars());
                assert!(cone_multiplicity(&fan, cone).is_one(), "cone {:?}", cone);
            }
        }
    }

    #[test]
    fn fan_completeness_randomized() {
        // 1000 random orthant vectors each lie in at least one maximal cone;
        // shared membership happens along shared faces.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20260811);
        let ideals = [ideal2("x^3, y^3"), ideal3("x^2, y^2, x*y*z"), ideal3("x^3, y^2, z^4")];
        let fans: Vec<Fan> = ideals
            .iter()
            .map(|i| normal_fan(&newton_polyhedron(i).unwrap()))
            .collect();
        for trial in 0..1000 {
            let fan = &fans[trial % fans.len()];
            let n = fan.rays[0].len();
            let w: Vec<BigInt> = (0..n).map(|_| BigInt::from(rng.gen_range(0..30i64))).collect();
            let containing: Vec<&Vec<usize>> = fan
                .max_cones
                .iter()
                .filter(|c| cone_contains(fan, c, &w))
                .collect();
            assert!(!containing.is_empty(), "vector {:?} not covered", w);
            if containing.len() > 1 {
                // w lies on the common face: the rays with positive
                // barycentric coordinate must be shared by all containers.
                for c in &containing {
                    let (lambda, _) = cone_coords(fan, c, &w).unwrap();
                    let support: Vec<usize> = c
                        .iter()
                        .zip(&lambda)
                        .filter(|(_, l)| l.is_positive())
                        .map(|(&r, _)| r)
                        .collect();
                    for other in &containing {
                        assert!(support.iter().all(|r| other.contains(r)));
                    }
                }
            }
        }
    }

    #[test]
    fn blowup_chart_examples() {
        let atlas = blowup_charts(&ideal2("x^3, y^3")).unwrap();
        assert_eq!(atlas.charts.len(), 2);
        // Content check up to coordinate renaming: one chart maps
        // (u,v) -> (u, uv) with f_tilde (1, v^3), the other (u,v) -> (uv, v)
        // with f_tilde (u^3, 1).
        let uv = vars_of(&["u1", "u2"]);
        let mut seen_a = false;
        let mut seen_b = false;
        for chart in &atlas.charts {
            for perm in [[0usize, 1], [1, 0]] {
                let x = chart
                    .pullback(&parse_poly("x", &atlas.ideal.vars).unwrap())
                    .permute_vars(&perm, &uv);
                let y = chart
                    .pullback(&parse_poly("y", &atlas.ideal.vars).unwrap())
                    .permute_vars(&perm, &uv);
                let f0 = chart.f_tilde[0].permute_vars(&perm, &uv);
                let f1 = chart.f_tilde[1].permute_vars(&perm, &uv);
                let fx = format!("{}|{}", x, y);
                if fx == "u1|u1*u2" {
                    seen_a = true;
                    assert!(f0.is_one());
                    assert_eq!(f1, parse_poly("u2^3", &uv).unwrap());
                }
                if fx == "u1*u2|u2" {
                    seen_b = true;
                    assert_eq!(f0, parse_poly("u1^3", &uv).unwrap());
                    assert!(f1.is_one());
                }
            }
        }
        assert!(seen_a && seen_b, "expected the two standard charts");

        // principal ideal: a single identity chart with f_tilde = (1)
        let i1 = MonomialIdeal::parse(&vars_of(&["x"]), "x").unwrap();
        let atlas = blowup_charts(&i1).unwrap();
        assert_eq!(atlas.charts.len(), 1);
        assert!(atlas.charts[0].f_tilde[0].is_one());
    }

    #[test]
    fn principality_symbolic() {
        // f_tilde[i] * u^{pullback of the vertex} == pullback(f_i) exactly.
        for ideal in [ideal2("x^3, y^3"), ideal3("x^2, y^2, x*y*z"), ideal2("x^2*y, x*y^3")] {
            let atlas = blowup_charts(&ideal).unwrap();
            for chart in &atlas.charts {
                let m = chart.pullback_exponent(&chart.e_generator);
                let m_poly = LaurentPoly::monomial(m, Scalar::one(), &chart.coords);
                for (i, a) in ideal.presented.iter().enumerate() {
                    let f = LaurentPoly::monomial(a.clone(), Scalar::one(), &ideal.vars);
                    assert_eq!(chart.f_tilde[i].mul(&m_poly), chart.pullback(&f));
                }
            }
        }
    }

    /// Integer inverse of a unimodular matrix given as rows.
    fn inverse_unimodular(m: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
        let n = m.len();
        let det = idet(m);
        assert!(det.clone().abs().is_one());
        let mut inv = vec![vec![BigInt::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let minor: Vec<Vec<BigInt>> = (0..n)
                    .filter(|&r| r != j)
                    .map(|r| {
                        (0..n).filter(|&c| c != i).map(|c| m[r][c].clone()).collect()
                    })
                    .collect();
                let mut cof = idet(&minor);
                if (i + j) % 2 == 1 {
                    cof = -cof;
                }
                inv[i][j] = if det.is_negative() { -cof } else { cof };
            }
        }
        inv
    }

    #[test]
    fn chart_gluing_on_overlap() {
        // Substituting the monomial transition into chart B's expression of
        // a generator reproduces chart A's expression up to the exceptional
        // trivialization unit x^{a_A - a_B}:
        //   subst(f~B_i) = f~A_i * pullA(x^{a_A}) / pullA(x^{a_B}).
        for ideal in [ideal2("x^3, y^3"), ideal3("x^2, y^2, x*y*z")] {
            let atlas = blowup_charts(&ideal).unwrap();
            for ca in &atlas.charts {
                for cb in &atlas.charts {
                    if ca.id == cb.id {
                        continue;
                    }
                    // Ray matrix of chart B: columns are rays; map_rows is
                    // exactly that matrix (rows indexed by X coordinates).
                    // The dual basis vectors m_i are the rows of its inverse
                    // transpose: u^B_i = x^{m_i}.
                    let n = ideal.num_vars();
                    let mb: Vec<Vec<BigInt>> = (0..n)
                        .map(|i| (0..n).map(|j| cb.map_rows[j][i].clone()).collect())
                        .collect(); // mb[i][j] = (w^B_i)_j
                    let mb_inv = inverse_unimodular(&mb);
                    // row i of mb_inv^T? u^B_i = x^{m_i} with <m_i, w_j> = delta.
                    // m_i solves mb * m_i = e_i, i.e. m_i = column i of mb^{-1}.
                    let duals: Vec<ExpVec> = (0..n)
                        .map(|i| ExpVec((0..n).map(|j| mb_inv[j][i].clone()).collect()))
                        .collect();
                    // substitution matrix: u^B_i as monomial in u^A; exp_map
                    // wants one row per target (chart A) coordinate.
                    let images: Vec<ExpVec> =
                        duals.iter().map(|m| ca.pullback_exponent(m)).collect();
                    let rows: Vec<Vec<BigInt>> = (0..n)
                        .map(|k| images.iter().map(|e| e.0[k].clone()).collect())
                        .collect();
                    for i in 0..ideal.rank() {
                        let subst = cb.f_tilde[i].exp_map(&rows, &ca.coords);
                        let unit = LaurentPoly::monomial(
                            ca.pullback_exponent(&ca.e_generator)
                                .sub(&ca.pullback_exponent(&cb.e_generator)),
                            Scalar::one(),
                            &ca.coords,
                        );
                        assert_eq!(subst, ca.f_tilde[i].mul(&unit));
                    }
                }
            }
        }
    }

    #[test]
    fn strata_examples() {
        let atlas = blowup_charts(&ideal2("x^3, y^3")).unwrap();
        let strata = exceptional_strata(&atlas);
        // per chart: 4 strata; exceptional ones are those over the origin
        let per_chart: Vec<&Stratum> = strata.iter().filter(|s| s.chart == 0).collect();
        assert_eq!(per_chart.len(), 4);
        let exceptional: Vec<&&Stratum> = per_chart.iter().filter(|s| s.exceptional).collect();
        assert_eq!(exceptional.len(), 2);
        for s in exceptional {
            assert_eq!(s.image_stratum, vec![0, 1]);
        }

        // principal ideal: only {u=0} maps into V(I)
        let i1 = MonomialIdeal::parse(&vars_of(&["x"]), "x").unwrap();
        let strata = exceptional_strata(&blowup_charts(&i1).unwrap());
        assert_eq!(strata.len(), 2);
        assert_eq!(strata.iter().filter(|s| s.exceptional).count(), 1);

        // Hochster example: the z-axis appears as a positive-dimensional
        // image stratum.
        let atlas = blowup_charts(&ideal3("x^2, y^2, x*y*z")).unwrap();
        let axis: BTreeSet<usize> = [0usize, 1].into_iter().collect();
        assert!(atlas.ideal.orbit_in_vanishing(&axis));
        let faces = atlas.faces_over(&axis);
        assert!(!faces.is_empty());
        let fp = fiber_param(&atlas, &faces[0]);
        assert_eq!(fp.base_coords, vec![2]);
    }

    #[test]
    fn exceptional_restriction_nonzero() {
        // On every exceptional stratum at least one chart generator
        // expression restricts to a nonzero Laurent polynomial.
        for ideal in [ideal2("x^3, y^3"), ideal3("x^2, y^2, x*y*z")] {
            let atlas = blowup_charts(&ideal).unwrap();
            for s in exceptional_strata(&atlas).iter().filter(|s| s.exceptional) {
                let zero: BTreeSet<usize> = s.zero_set.iter().copied().collect();
                let chart = &atlas.charts[s.chart];
                let any = chart.f_tilde.iter().any(|f| {
                    f.restrict_zero(&zero).map(|r| !r.is_zero()).unwrap_or(false)
                });
                assert!(any);
            }
        }
    }

    #[test]
    fn fiber_param_splits_hochster_fiber() {
        // Over the z-axis the fiber of the blow-up of (x^2,y^2,xyz) is a
        // line with functions (1, t^2, z t) in suitable coordinates.
        let atlas = blowup_charts(&ideal3("x^2, y^2, x*y*z")).unwrap();
        let axis: BTreeSet<usize> = [0usize, 1].into_iter().collect();
        let faces = atlas.faces_over(&axis);
        let mut profiles = BTreeSet::new();
        for f in &faces {
            let fp = fiber_param(&atlas, f);
            profiles.insert(fp.fiber_dim);
        }
        assert!(profiles.contains(&1), "expected a 1-dimensional fiber piece");
    }
}
