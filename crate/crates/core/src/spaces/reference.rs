//! Reference-element shape sets for Lagrange, Nédélec and Raviart–Thomas spaces.
//!
//! Shape functions are obtained from a Legendre-product spanning set by
//! L2-orthonormalizing it (dependent members drop out) and inverting the
//! DOF matrix of the result.
//! All DOF functionals are written in the parameter space of the edge, face
//! or cell, which makes them invariant under the affine map together with the
//! matching Piola transform.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, Vec3};
use crate::mesh::{LOCAL_EDGES, LOCAL_FACES};
use crate::quadrature::{gauss_rule_line, gauss_rule_tet, gauss_rule_tri};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Lagrange,
    Nedelec,
    RaviartThomas,
}

pub const MAX_DEGREE_VECTOR: usize = 6;
pub const MAX_DEGREE_LAGRANGE: usize = 5;

pub const REF_VERTICES: [Vec3; 4] = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn dim_p3(q: usize) -> usize {
    (q + 1) * (q + 2) * (q + 3) / 6
}

pub fn dim_p2(q: usize) -> usize {
    (q + 1) * (q + 2) / 2
}

pub fn dim_nd(q: usize) -> usize {
    (q + 1) * (q + 3) * (q + 4) / 2
}

pub fn dim_rt(q: usize) -> usize {
    (q + 1) * (q + 2) * (q + 4) / 2
}

/// Shifted Legendre polynomials `L_n(2x - 1)` and their derivatives for `n <= deg`.
pub fn legendre01(deg: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let t = 2.0 * x - 1.0;
    let mut p = vec![0.0; deg + 1];
    let mut dp = vec![0.0; deg + 1];
    p[0] = 1.0;
    if deg >= 1 {
        p[1] = t;
        dp[1] = 2.0;
    }
    for n in 1..deg {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * t * p[n] - nf * p[n - 1]) / (nf + 1.0);
        // d/dx = 2 d/dt, and P'_{n+1} = P'_{n-1} + (2n+1) P_n
        dp[n + 1] = dp[n - 1] + 2.0 * (2.0 * nf + 1.0) * p[n];
    }
    (p, dp)
}

/// Multi-indices of total degree `<= q` in `d` variables, ordered by degree.
pub fn multi_indices(d: usize, q: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for deg in 0..=q {
        match d {
            1 => out.push([deg, 0, 0]),
            2 => {
                for a in (0..=deg).rev() {
                    out.push([a, deg - a, 0]);
                }
            }
            _ => {
                for a in (0..=deg).rev() {
                    for b in (0..=deg - a).rev() {
                        out.push([a, b, deg - a - b]);
                    }
                }
            }
        }
    }
    out
}

/// Values and gradients of the Legendre-product basis of `P_q` at `x`.
pub fn poly_basis3(q: usize, x: Vec3) -> (Vec<f64>, Vec<Vec3>) {
    let l: Vec<_> = (0..3).map(|i| legendre01(q, x[i])).collect();
    let idx = multi_indices(3, q);
    let mut v = Vec::with_capacity(idx.len());
    let mut g = Vec::with_capacity(idx.len());
    for [a, b, c] in idx {
        let (la, lb, lc) = (l[0].0[a], l[1].0[b], l[2].0[c]);
        v.push(la * lb * lc);
        g.push([l[0].1[a] * lb * lc, la * l[1].1[b] * lc, la * lb * l[2].1[c]]);
    }
    (v, g)
}

pub fn poly_basis2(q: usize, s: f64, t: f64) -> Vec<f64> {
    let (ls, _) = legendre01(q, s);
    let (lt, _) = legendre01(q, t);
    multi_indices(2, q).into_iter().map(|[a, b, _]| ls[a] * lt[b]).collect()
}

pub fn poly_basis1(q: usize, t: f64) -> Vec<f64> {
    legendre01(q, t).0
}

/// Number of DOFs attached to each vertex, edge, face and the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofLayout {
    pub per_vertex: usize,
    pub per_edge: usize,
    pub per_face: usize,
    pub interior: usize,
}

impl DofLayout {
    pub fn new(kind: SpaceKind, q: usize) -> Self {
        match kind {
            SpaceKind::Lagrange => DofLayout {
                per_vertex: 1,
                per_edge: q.saturating_sub(1),
                per_face: if q >= 3 { dim_p2(q - 3) } else { 0 },
                interior: if q >= 4 { dim_p3(q - 4) } else { 0 },
            },
            SpaceKind::Nedelec => DofLayout {
                per_vertex: 0,
                per_edge: q + 1,
                per_face: if q >= 1 { 2 * dim_p2(q - 1) } else { 0 },
                interior: if q >= 2 { 3 * dim_p3(q - 2) } else { 0 },
            },
            SpaceKind::RaviartThomas => DofLayout {
                per_vertex: 0,
                per_edge: 0,
                per_face: dim_p2(q),
                interior: if q >= 1 { 3 * dim_p3(q - 1) } else { 0 },
            },
        }
    }

    pub fn total(&self) -> usize {
        4 * self.per_vertex + 6 * self.per_edge + 4 * self.per_face + self.interior
    }

    pub fn vertex_offset(&self, l: usize) -> usize {
        l * self.per_vertex
    }

    pub fn edge_offset(&self, l: usize) -> usize {
        4 * self.per_vertex + l * self.per_edge
    }

    pub fn face_offset(&self, l: usize) -> usize {
        4 * self.per_vertex + 6 * self.per_edge + l * self.per_face
    }

    pub fn interior_offset(&self) -> usize {
        4 * self.per_vertex + 6 * self.per_edge + 4 * self.per_face
    }
}

/// Number of scalar components of values and of the differential.
pub fn components(kind: SpaceKind) -> (usize, usize) {
    match kind {
        SpaceKind::Lagrange => (1, 3),
        SpaceKind::Nedelec => (3, 3),
        SpaceKind::RaviartThomas => (3, 1),
    }
}

/// Spanning functions of the space at `x`: values and differentials
/// (gradient, curl or divergence), each flattened to 3 components.
fn spanning(kind: SpaceKind, q: usize, x: Vec3) -> (Vec<Vec3>, Vec<Vec3>) {
    let (s, gs) = poly_basis3(q, x);
    let y = [x[0] - 0.25, x[1] - 0.25, x[2] - 0.25];
    let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut val = Vec::new();
    let mut der = Vec::new();
    match kind {
        SpaceKind::Lagrange => {
            for i in 0..s.len() {
                val.push([s[i], 0.0, 0.0]);
                der.push(gs[i]);
            }
        }
        SpaceKind::Nedelec => {
            for i in 0..s.len() {
                for ek in e {
                    val.push([s[i] * ek[0], s[i] * ek[1], s[i] * ek[2]]);
                    der.push(cross(gs[i], ek));
                }
            }
            for i in 0..s.len() {
                for ek in e {
                    let w = cross(y, ek);
                    val.push([s[i] * w[0], s[i] * w[1], s[i] * w[2]]);
                    let c = cross(gs[i], w);
                    der.push([c[0] - 2.0 * s[i] * ek[0], c[1] - 2.0 * s[i] * ek[1], c[2] - 2.0 * s[i] * ek[2]]);
                }
            }
        }
        SpaceKind::RaviartThomas => {
            for i in 0..s.len() {
                for (k, ek) in e.iter().enumerate() {
                    val.push([s[i] * ek[0], s[i] * ek[1], s[i] * ek[2]]);
                    der.push([gs[i][k], 0.0, 0.0]);
                }
            }
            for i in 0..s.len() {
                val.push([s[i] * y[0], s[i] * y[1], s[i] * y[2]]);
                der.push([dot(gs[i], y) + 3.0 * s[i], 0.0, 0.0]);
            }
        }
    }
    (val, der)
}

type OrthoCache = Mutex<HashMap<(usize, usize), Arc<DMatrix<f64>>>>;

/// Lower-triangular transform taking the Legendre-product basis of `P_q`
/// on the reference simplex of dimension `d` to an L2-orthonormal basis.
fn ortho_transform(d: usize, q: usize) -> Arc<DMatrix<f64>> {
    static CACHE: OnceLock<OrthoCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap().get(&(d, q)) {
        return t.clone();
    }
    let rule = if d == 2 { gauss_rule_tri(2 * q) } else { gauss_rule_tet(2 * q) }.expect("orthonormal basis degree");
    let n = if d == 2 { dim_p2(q) } else { dim_p3(q) };
    let mut g = DMatrix::<f64>::zeros(n, n);
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let b = if d == 2 { poly_basis2(q, p[0], p[1]) } else { poly_basis3(q, *p).0 };
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] += w * b[i] * b[j];
            }
        }
    }
    let l = g.cholesky().expect("Gram matrix of a basis is SPD").l();
    let t = Arc::new(l.try_inverse().expect("triangular inverse"));
    cache.lock().unwrap().entry((d, q)).or_insert(t).clone()
}

/// L2-orthonormal basis of `P_q` on the reference triangle.
pub fn ortho_basis2(q: usize, s: f64, t: f64) -> Vec<f64> {
    let b = DVector::from_vec(poly_basis2(q, s, t));
    (&*ortho_transform(2, q) * b).as_slice().to_vec()
}

/// L2-orthonormal basis of `P_q` on the reference tetrahedron.
pub fn ortho_basis3(q: usize, x: Vec3) -> Vec<f64> {
    let b = DVector::from_vec(poly_basis3(q, x).0);
    (&*ortho_transform(3, q) * b).as_slice().to_vec()
}

/// Apply the reference DOF functionals of `(kind, q)` to a field given on the
/// reference element. Scalar fields use component 0. `extra` raises the
/// quadrature exactness above what polynomial fields of degree `q + 1` need.
pub fn apply_reference_dofs(kind: SpaceKind, q: usize, extra: usize, f: &dyn Fn(Vec3) -> Vec3) -> Result<Vec<f64>> {
    let m = apply_reference_dofs_multi(kind, q, extra, 1, &|x| vec![f(x)])?;
    Ok(m.column(0).iter().copied().collect())
}

/// As [`apply_reference_dofs`] for `nf` fields at once; column `j` of the
/// result holds the DOFs of field `j`.
pub fn apply_reference_dofs_multi(
    kind: SpaceKind,
    q: usize,
    extra: usize,
    nf: usize,
    f: &dyn Fn(Vec3) -> Vec<Vec3>,
) -> Result<DMatrix<f64>> {
    let lay = DofLayout::new(kind, q);
    let ex = 2 * q + 2 + extra;
    let line = gauss_rule_line(ex)?;
    let tri = gauss_rule_tri(ex)?;
    let tet = gauss_rule_tet(ex)?;
    let mut out = DMatrix::<f64>::zeros(lay.total(), nf);
    let v = REF_VERTICES;
    let mut row = 0;
    if lay.per_vertex > 0 {
        for p in v {
            let fx = f(p);
            for j in 0..nf {
                out[(row, j)] = fx[j][0];
            }
            row += 1;
        }
    }
    if lay.per_edge > 0 {
        let rdeg = match kind {
            SpaceKind::Lagrange => q - 2,
            _ => q,
        };
        for e in LOCAL_EDGES {
            let (a, b) = (v[e[0]], v[e[1]]);
            let tan = crate::geometry::sub(b, a);
            for (pt, w) in line.points.iter().zip(&line.weights) {
                let t = pt[0];
                let x = [a[0] + t * tan[0], a[1] + t * tan[1], a[2] + t * tan[2]];
                let fx = f(x);
                // shifted Legendre scaled to be orthonormal on [0, 1]
                let r: Vec<f64> =
                    poly_basis1(rdeg, t).into_iter().enumerate().map(|(m, l)| l * (2.0 * m as f64 + 1.0).sqrt()).collect();
                for j in 0..nf {
                    let val = if kind == SpaceKind::Lagrange { fx[j][0] } else { dot(fx[j], tan) };
                    for (m, rm) in r.iter().enumerate() {
                        out[(row + m, j)] += w * val * rm;
                    }
                }
            }
            row += rdeg + 1;
        }
    }
    if lay.per_face > 0 {
        let rdeg = match kind {
            SpaceKind::Lagrange => q - 3,
            SpaceKind::Nedelec => q - 1,
            SpaceKind::RaviartThomas => q,
        };
        let nr = dim_p2(rdeg);
        for fl in LOCAL_FACES {
            let a = v[fl[0]];
            let t1 = crate::geometry::sub(v[fl[1]], a);
            let t2 = crate::geometry::sub(v[fl[2]], a);
            let nrm = cross(t1, t2);
            for (pt, w) in tri.points.iter().zip(&tri.weights) {
                let (s, t) = (pt[0], pt[1]);
                let x = [a[0] + s * t1[0] + t * t2[0], a[1] + s * t1[1] + t * t2[1], a[2] + s * t1[2] + t * t2[2]];
                let fx = f(x);
                let r = ortho_basis2(rdeg, s, t);
                for j in 0..nf {
                    match kind {
                        SpaceKind::Lagrange => {
                            for m in 0..nr {
                                out[(row + m, j)] += w * fx[j][0] * r[m];
                            }
                        }
                        SpaceKind::Nedelec => {
                            let (c1, c2) = (dot(fx[j], t1), dot(fx[j], t2));
                            for m in 0..nr {
                                out[(row + 2 * m, j)] += w * c1 * r[m];
                                out[(row + 2 * m + 1, j)] += w * c2 * r[m];
                            }
                        }
                        SpaceKind::RaviartThomas => {
                            let c = dot(fx[j], nrm);
                            for m in 0..nr {
                                out[(row + m, j)] += w * c * r[m];
                            }
                        }
                    }
                }
            }
            row += lay.per_face;
        }
    }
    if lay.interior > 0 {
        let rdeg = match kind {
            SpaceKind::Lagrange => q - 4,
            SpaceKind::Nedelec => q - 2,
            SpaceKind::RaviartThomas => q - 1,
        };
        let nr = dim_p3(rdeg);
        let ncomp = if kind == SpaceKind::Lagrange { 1 } else { 3 };
        for (pt, w) in tet.points.iter().zip(&tet.weights) {
            let fx = f(*pt);
            let r = ortho_basis3(rdeg, *pt);
            for j in 0..nf {
                for m in 0..nr {
                    for c in 0..ncomp {
                        out[(row + ncomp * m + c, j)] += w * fx[j][c] * r[m];
                    }
                }
            }
        }
        row += lay.interior;
    }
    debug_assert_eq!(row, lay.total());
    Ok(out)
}

/// Shape functions of one space on the reference tetrahedron.
#[derive(Debug)]
pub struct ShapeSet {
    pub kind: SpaceKind,
    pub degree: usize,
    pub layout: DofLayout,
    /// Column `i` holds the spanning-set coefficients of shape function `i`.
    coeff: DMatrix<f64>,
}

/// Shape function values and differentials on the reference element, each
/// flattened to three components (`[value, 0, 0]` for scalars).
#[derive(Clone, Debug)]
pub struct PointEval {
    pub val: Vec<Vec3>,
    pub der: Vec<Vec3>,
}

impl ShapeSet {
    pub fn new(kind: SpaceKind, q: usize) -> Result<Self> {
        let cap = if kind == SpaceKind::Lagrange { MAX_DEGREE_LAGRANGE } else { MAX_DEGREE_VECTOR };
        if q > cap {
            return Err(Error::InvalidArgument(format!("{kind:?} degree {q} above cap {cap}")));
        }
        if kind == SpaceKind::Lagrange && q == 0 {
            return Err(Error::InvalidArgument("continuous Lagrange space needs degree >= 1".into()));
        }
        let layout = DofLayout::new(kind, q);
        let n = layout.total();
        let expect = match kind {
            SpaceKind::Lagrange => dim_p3(q),
            SpaceKind::Nedelec => dim_nd(q),
            SpaceKind::RaviartThomas => dim_rt(q),
        };
        assert_eq!(n, expect, "DOF count mismatch for {kind:?} q={q}");

        // L2-orthonormalize the spanning set with pivoted Gram–Schmidt on
        // weighted quadrature values; dependent members drop out.
        let rule = gauss_rule_tet(2 * q + 2)?;
        let nspan = spanning(kind, q, [0.1, 0.2, 0.3]).0.len();
        let np = rule.len();
        let mut vals = DMatrix::<f64>::zeros(3 * np, nspan);
        for (p, (x, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let sw = w.sqrt();
            let (v, _) = spanning(kind, q, *x);
            for j in 0..nspan {
                for k in 0..3 {
                    vals[(3 * p + k, j)] = sw * v[j][k];
                }
            }
        }
        let mut comb = DMatrix::<f64>::identity(nspan, nspan);
        let mut chosen: Vec<usize> = Vec::new();
        let mut remaining: Vec<usize> = (0..nspan).collect();
        let scale = (0..nspan).map(|j| vals.column(j).norm()).fold(0.0, f64::max);
        while chosen.len() < n {
            let (pos, best) = remaining
                .iter()
                .enumerate()
                .map(|(p, &j)| (p, vals.column(j).norm()))
                .fold((usize::MAX, 0.0), |acc, (p, nv)| if nv > acc.1 { (p, nv) } else { acc });
            if pos == usize::MAX || best < 1e-9 * scale {
                return Err(Error::InvalidArgument(format!(
                    "{kind:?} q={q}: spanning set rank {} below dimension {n}",
                    chosen.len()
                )));
            }
            let j = remaining.remove(pos);
            let inv = 1.0 / best;
            vals.column_mut(j).scale_mut(inv);
            comb.column_mut(j).scale_mut(inv);
            for &k in &remaining {
                let proj = vals.column(k).dot(&vals.column(j));
                let vj = vals.column(j).clone_owned();
                let cj = comb.column(j).clone_owned();
                vals.column_mut(k).axpy(-proj, &vj, 1.0);
                comb.column_mut(k).axpy(-proj, &cj, 1.0);
            }
            chosen.push(j);
        }
        let b = DMatrix::from_fn(nspan, n, |i, c| comb[(i, chosen[c])]);
        let d_span = apply_reference_dofs_multi(kind, q, 0, nspan, &|x| spanning(kind, q, x).0)?;
        let d = &d_span * &b;
        let dinv = d
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument(format!("{kind:?} q={q}: singular DOF matrix")))?;
        Ok(ShapeSet { kind, degree: q, layout, coeff: b * dinv })
    }

    pub fn ndof(&self) -> usize {
        self.layout.total()
    }

    pub fn eval(&self, x: Vec3) -> PointEval {
        let (sv, sd) = spanning(self.kind, self.degree, x);
        let n = self.ndof();
        let mut val = vec![[0.0; 3]; n];
        let mut der = vec![[0.0; 3]; n];
        for (j, (svj, sdj)) in sv.iter().zip(&sd).enumerate() {
            for i in 0..n {
                let c = self.coeff[(j, i)];
                for k in 0..3 {
                    val[i][k] += c * svj[k];
                    der[i][k] += c * sdj[k];
                }
            }
        }
        PointEval { val, der }
    }

    /// Tabulate at many points: `(npts * 3) x ndof` matrices.
    pub fn tabulate(&self, points: &[Vec3]) -> Tabulation {
        let ns = self.coeff.nrows();
        let np = points.len();
        let mut sv = DMatrix::<f64>::zeros(3 * np, ns);
        let mut sd = DMatrix::<f64>::zeros(3 * np, ns);
        for (p, x) in points.iter().enumerate() {
            let (v, d) = spanning(self.kind, self.degree, *x);
            for j in 0..ns {
                for k in 0..3 {
                    sv[(3 * p + k, j)] = v[j][k];
                    sd[(3 * p + k, j)] = d[j][k];
                }
            }
        }
        Tabulation { npts: np, val: &sv * &self.coeff, der: &sd * &self.coeff }
    }
}

/// Reference tabulation; row `3p + k` holds component `k` at point `p`.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub npts: usize,
    pub val: DMatrix<f64>,
    pub der: DMatrix<f64>,
}

type ShapeCache = Mutex<HashMap<(SpaceKind, usize), Arc<ShapeSet>>>;

/// Cached reference shape set.
pub fn shape_set(kind: SpaceKind, q: usize) -> Result<Arc<ShapeSet>> {
    static CACHE: OnceLock<ShapeCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&(kind, q)) {
        return Ok(s.clone());
    }
    let s = Arc::new(ShapeSet::new(kind, q)?);
    Ok(cache.lock().unwrap().entry((kind, q)).or_insert(s).clone())
}

type TabCache = Mutex<HashMap<(SpaceKind, usize, usize), Arc<Tabulation>>>;

/// Cached tabulation at the points of the tetrahedron rule of the given exactness.
pub fn volume_tabulation(kind: SpaceKind, q: usize, exactness: usize) -> Result<Arc<Tabulation>> {
    static CACHE: OnceLock<TabCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap().get(&(kind, q, exactness)) {
        return Ok(t.clone());
    }
    let rule = gauss_rule_tet(exactness)?;
    let t = Arc::new(shape_set(kind, q)?.tabulate(&rule.points));
    Ok(cache.lock().unwrap().entry((kind, q, exactness)).or_insert(t).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        assert_eq!(dim_nd(0), 6);
        assert_eq!(dim_rt(0), 4);
        assert_eq!(dim_nd(1), 20);
        assert_eq!(dim_rt(1), 15);
        for q in 0..=4 {
            assert_eq!(DofLayout::new(SpaceKind::Nedelec, q).total(), dim_nd(q));
            assert_eq!(DofLayout::new(SpaceKind::RaviartThomas, q).total(), dim_rt(q));
        }
        for q in 1..=5 {
            assert_eq!(DofLayout::new(SpaceKind::Lagrange, q).total(), dim_p3(q));
        }
    }

    #[test]
    fn legendre_derivatives() {
        let h = 1e-6;
        let (_, d) = legendre01(6, 0.3);
        let (p1, _) = legendre01(6, 0.3 + h);
        let (p0, _) = legendre01(6, 0.3 - h);
        for n in 0..=6 {
            assert!(((p1[n] - p0[n]) / (2.0 * h) - d[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_unisolvence() {
        for kind in [SpaceKind::Nedelec, SpaceKind::RaviartThomas, SpaceKind::Lagrange] {
            let qs: Vec<usize> = if kind == SpaceKind::Lagrange { (1..=5).collect() } else { (0..=5).collect() };
            for q in qs {
                let s = shape_set(kind, q).unwrap();
                let n = s.ndof();
                let d = apply_reference_dofs_multi(kind, q, 0, n, &|x| s.eval(x).val).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((d[(i, j)] - e).abs() < 1e-10, "{kind:?} q={q} ({i},{j}) {}", d[(i, j)]);
                    }
                }
            }
        }
    }

    #[test]
    fn differentials_match_finite_differences() {
        let x = [0.21, 0.17, 0.33];
        let h = 1e-6;
        for kind in [SpaceKind::Nedelec, SpaceKind::RaviartThomas, SpaceKind::Lagrange] {
            let s = shape_set(kind, 2).unwrap();
            let e0 = s.eval(x);
            let mut jac = vec![[[0.0; 3]; 3]; s.ndof()];
            for d in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[d] += h;
                xm[d] -= h;
                let (ep, em) = (s.eval(xp), s.eval(xm));
                for i in 0..s.ndof() {
                    for c in 0..3 {
                        jac[i][c][d] = (ep.val[i][c] - em.val[i][c]) / (2.0 * h);
                    }
                }
            }
            for i in 0..s.ndof() {
                let j = jac[i];
                let fd = match kind {
                    SpaceKind::Lagrange => j[0],
                    SpaceKind::Nedelec => [j[2][1] - j[1][2], j[0][2] - j[2][0], j[1][0] - j[0][1]],
                    SpaceKind::RaviartThomas => [j[0][0] + j[1][1] + j[2][2], 0.0, 0.0],
                };
                for c in 0..3 {
                    assert!((fd[c] - e0.der[i][c]).abs() < 1e-5, "{kind:?} {i}");
                }
            }
        }
    }

    #[test]
    fn degree_caps() {
        assert!(ShapeSet::new(SpaceKind::Nedelec, 7).is_err());
        assert!(ShapeSet::new(SpaceKind::Lagrange, 6).is_err());
        assert!(ShapeSet::new(SpaceKind::Lagrange, 0).is_err());
    }
}
