//! Global and patch-local finite element spaces, coefficient fields,
//! elementwise L2 projection and the canonical Raviart–Thomas interpolator.

pub mod reference;

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{mat_t_vec, mat_vec, scale, Mat3, TetGeometry, Vec3};
use crate::mesh::{TetMesh, LOCAL_EDGES, LOCAL_FACES};
use crate::quadrature::gauss_rule_tet;
pub use reference::{shape_set, DofLayout, ShapeSet, SpaceKind, Tabulation};

/// Map reference values and differentials of one point to the physical element.
#[inline]
pub fn piola_value(kind: SpaceKind, g: &TetGeometry, v: Vec3) -> Vec3 {
    match kind {
        SpaceKind::Lagrange => v,
        SpaceKind::Nedelec => mat_t_vec(&g.jac_inv, v),
        SpaceKind::RaviartThomas => scale(1.0 / g.det, mat_vec(&g.jac, v)),
    }
}

#[inline]
pub fn piola_der(kind: SpaceKind, g: &TetGeometry, d: Vec3) -> Vec3 {
    match kind {
        SpaceKind::Lagrange => mat_t_vec(&g.jac_inv, d),
        SpaceKind::Nedelec => scale(1.0 / g.det, mat_vec(&g.jac, d)),
        SpaceKind::RaviartThomas => [d[0] / g.det, 0.0, 0.0],
    }
}

/// Pull a physical field value back to the reference element.
#[inline]
pub fn piola_pullback(kind: SpaceKind, g: &TetGeometry, v: Vec3) -> Vec3 {
    match kind {
        SpaceKind::Lagrange => v,
        SpaceKind::Nedelec => g.covariant_pullback(v),
        SpaceKind::RaviartThomas => g.contravariant_pullback(v),
    }
}

/// Matrix `A` with physical value (or differential) `A v̂` of a reference
/// value `v̂`; the scalar divergence of Raviart–Thomas fields sits in the
/// first component.
pub fn piola_matrix(kind: SpaceKind, g: &TetGeometry, der: bool) -> Mat3 {
    let jt = |m: &Mat3| [[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]];
    let scaled = |m: &Mat3, s: f64| m.map(|r| r.map(|v| v * s));
    let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    match (kind, der) {
        (SpaceKind::Lagrange, false) => id,
        (SpaceKind::Lagrange, true) | (SpaceKind::Nedelec, false) => jt(&g.jac_inv),
        (SpaceKind::Nedelec, true) | (SpaceKind::RaviartThomas, false) => scaled(&g.jac, 1.0 / g.det),
        (SpaceKind::RaviartThomas, true) => [[1.0 / g.det, 0.0, 0.0], [0.0; 3], [0.0; 3]],
    }
}

/// Reference moments `R_rs = sum_q w_q a_r(q) b_s(q)^T` of two tabulations
/// on one rule. For affine elements every physical Gram matrix is
/// `|det J| sum_rs (A^T B)_rs R_rs`, see [`ReferenceMoments::gram`].
#[derive(Clone, Debug)]
pub struct ReferenceMoments {
    pub r: Vec<DMatrix<f64>>,
}

impl ReferenceMoments {
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &[f64]) -> Self {
        let np = weights.len();
        let comp = |m: &DMatrix<f64>, c: usize, w: bool| {
            DMatrix::from_fn(np, m.ncols(), |q, i| if w { weights[q] * m[(3 * q + c, i)] } else { m[(3 * q + c, i)] })
        };
        let bs: Vec<DMatrix<f64>> = (0..3).map(|s| comp(b, s, false)).collect();
        let mut r = Vec::with_capacity(9);
        for rr in 0..3 {
            let ar = comp(a, rr, true);
            for bsv in &bs {
                r.push(ar.tr_mul(bsv));
            }
        }
        ReferenceMoments { r }
    }

    /// `sum_q w_q (A a(q)) . (B b(q)) |det|` for the maps `A`, `B`.
    pub fn gram(&self, a: &Mat3, b: &Mat3, measure: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.r[0].nrows(), self.r[0].ncols());
        for rr in 0..3 {
            for ss in 0..3 {
                let t: f64 = (0..3).map(|k| a[k][rr] * b[k][ss]).sum::<f64>() * measure;
                if t != 0.0 {
                    out += &self.r[3 * rr + ss] * t;
                }
            }
        }
        out
    }
}

/// Physical tabulation on one element; same row layout as [`Tabulation`].
pub struct ElementTab {
    pub val: DMatrix<f64>,
    pub der: DMatrix<f64>,
}

pub fn element_tabulation(kind: SpaceKind, g: &TetGeometry, tab: &Tabulation) -> ElementTab {
    let n = tab.val.ncols();
    let mut val = DMatrix::<f64>::zeros(3 * tab.npts, n);
    let mut der = DMatrix::<f64>::zeros(3 * tab.npts, n);
    for p in 0..tab.npts {
        for i in 0..n {
            let v = [tab.val[(3 * p, i)], tab.val[(3 * p + 1, i)], tab.val[(3 * p + 2, i)]];
            let d = [tab.der[(3 * p, i)], tab.der[(3 * p + 1, i)], tab.der[(3 * p + 2, i)]];
            let pv = piola_value(kind, g, v);
            let pd = piola_der(kind, g, d);
            for k in 0..3 {
                val[(3 * p + k, i)] = pv[k];
                der[(3 * p + k, i)] = pd[k];
            }
        }
    }
    ElementTab { val, der }
}

/// `sum_p w_p a(p)^T b(p)` with `a`, `b` in tabulation layout; weights already
/// include the measure.
pub fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut aw = a.clone();
    for (p, w) in weights.iter().enumerate() {
        for k in 0..3 {
            aw.row_mut(3 * p + k).scale_mut(*w);
        }
    }
    aw.transpose() * b
}

/// Mesh-wide DOF index of local DOF `i` on tet `k`.
fn mesh_dof(mesh: &TetMesh, lay: &DofLayout, k: usize, i: usize) -> usize {
    let nv = mesh.num_vertices();
    let ne = mesh.edges.len();
    let nf = mesh.faces.len();
    let off_e = nv * lay.per_vertex;
    let off_f = off_e + ne * lay.per_edge;
    let off_i = off_f + nf * lay.per_face;
    let mut r = i;
    if r < 4 * lay.per_vertex {
        return mesh.tets[k][r / lay.per_vertex] * lay.per_vertex + r % lay.per_vertex;
    }
    r -= 4 * lay.per_vertex;
    if r < 6 * lay.per_edge {
        return off_e + mesh.tet_edges[k][r / lay.per_edge] * lay.per_edge + r % lay.per_edge;
    }
    r -= 6 * lay.per_edge;
    if r < 4 * lay.per_face {
        return off_f + mesh.tet_faces[k][r / lay.per_face] * lay.per_face + r % lay.per_face;
    }
    r -= 4 * lay.per_face;
    off_i + k * lay.interior + r
}

/// Local DOFs of tet `k` carried by the closure of local face `l` that
/// determine the trace of the given kind (tangential, normal or full).
pub fn face_trace_dofs(kind: SpaceKind, lay: &DofLayout, l: usize) -> Vec<usize> {
    let f = LOCAL_FACES[l];
    let mut out = Vec::new();
    if kind == SpaceKind::Lagrange {
        for &v in &f {
            out.extend((0..lay.per_vertex).map(|m| lay.vertex_offset(v) + m));
        }
    }
    if kind != SpaceKind::RaviartThomas {
        for (e, ev) in LOCAL_EDGES.iter().enumerate() {
            if f.contains(&ev[0]) && f.contains(&ev[1]) {
                out.extend((0..lay.per_edge).map(|m| lay.edge_offset(e) + m));
            }
        }
    }
    out.extend((0..lay.per_face).map(|m| lay.face_offset(l) + m));
    out
}

/// Conforming space on a set of tetrahedra with homogeneous trace
/// constraints on a set of faces.
#[derive(Debug)]
pub struct FeSpace {
    pub kind: SpaceKind,
    pub degree: usize,
    pub shape: Arc<ShapeSet>,
    pub tets: Vec<usize>,
    slot: HashMap<usize, usize>,
    /// Compact DOF indices per element slot, in local DOF order.
    pub elem_dofs: Vec<Vec<usize>>,
    /// Mesh-wide index of each compact DOF.
    pub mesh_index: Vec<usize>,
    pub fixed: Vec<bool>,
    free_of: Vec<Option<usize>>,
    pub n_free: usize,
}

impl FeSpace {
    /// Space over `tets` with zero traces on the faces flagged in `constrained`
    /// (indexed by mesh face id).
    pub fn on_tets(mesh: &TetMesh, kind: SpaceKind, q: usize, tets: &[usize], constrained: &[bool]) -> Result<Self> {
        let shape = shape_set(kind, q)?;
        let lay = shape.layout;
        let n = lay.total();
        let mut raw: Vec<Vec<usize>> = Vec::with_capacity(tets.len());
        let mut all = Vec::new();
        for &k in tets {
            let d: Vec<usize> = (0..n).map(|i| mesh_dof(mesh, &lay, k, i)).collect();
            all.extend_from_slice(&d);
            raw.push(d);
        }
        all.sort_unstable();
        all.dedup();
        let compact: HashMap<usize, usize> = all.iter().enumerate().map(|(i, &g)| (g, i)).collect();
        let elem_dofs: Vec<Vec<usize>> = raw.iter().map(|d| d.iter().map(|g| compact[g]).collect()).collect();
        let mut fixed = vec![false; all.len()];
        for (s, &k) in tets.iter().enumerate() {
            for l in 0..4 {
                if constrained[mesh.tet_faces[k][l]] {
                    for i in face_trace_dofs(kind, &lay, l) {
                        fixed[elem_dofs[s][i]] = true;
                    }
                }
            }
        }
        let mut free_of = vec![None; all.len()];
        let mut n_free = 0;
        for (i, f) in fixed.iter().enumerate() {
            if !f {
                free_of[i] = Some(n_free);
                n_free += 1;
            }
        }
        Ok(FeSpace {
            kind,
            degree: q,
            shape,
            tets: tets.to_vec(),
            slot: tets.iter().enumerate().map(|(s, &k)| (k, s)).collect(),
            elem_dofs,
            mesh_index: all,
            fixed,
            free_of,
            n_free,
        })
    }

    /// Space over the whole mesh.
    pub fn global(mesh: &TetMesh, kind: SpaceKind, q: usize, constrained: &[bool]) -> Result<Self> {
        let tets: Vec<usize> = (0..mesh.num_tets()).collect();
        Self::on_tets(mesh, kind, q, &tets, constrained)
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh_index.len()
    }

    pub fn free_index(&self, i: usize) -> Option<usize> {
        self.free_of[i]
    }

    pub fn slot_of(&self, tet: usize) -> Option<usize> {
        self.slot.get(&tet).copied()
    }

    /// Free indices of the DOFs of element slot `s` (None for fixed DOFs).
    pub fn elem_free(&self, s: usize) -> Vec<Option<usize>> {
        self.elem_dofs[s].iter().map(|&d| self.free_of[d]).collect()
    }

    /// Expand a vector over free DOFs to all DOFs, fixed ones set to zero.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        self.free_of.iter().map(|f| f.map_or(0.0, |i| free[i])).collect()
    }

    /// Constrain one additional DOF to zero.
    pub fn pin_dof(&mut self, i: usize) {
        self.fixed[i] = true;
        let mut n_free = 0;
        for (k, f) in self.fixed.iter().enumerate() {
            self.free_of[k] = if *f {
                None
            } else {
                n_free += 1;
                Some(n_free - 1)
            };
        }
        self.n_free = n_free;
    }

    /// Lookup table from mesh-wide index to compact index.
    pub fn compact_map(&self) -> HashMap<usize, usize> {
        self.mesh_index.iter().enumerate().map(|(i, &g)| (g, i)).collect()
    }
}

/// Build a space on the whole mesh with trace constraints on the given faces.
pub fn build_global_space(mesh: &TetMesh, kind: SpaceKind, q: usize, constrained: &[bool]) -> Result<FeSpace> {
    FeSpace::global(mesh, kind, q, constrained)
}

/// Coefficient vector over an [`FeSpace`] (all DOFs, fixed ones included).
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub space: Arc<FeSpace>,
    pub coeffs: Vec<f64>,
}

impl CoefficientField {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::InvalidArgument(format!(
                "coefficient length {} does not match {} DOFs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(CoefficientField { space, coeffs })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        CoefficientField { space, coeffs: vec![0.0; n] }
    }

    pub fn elem_coeffs(&self, slot: usize) -> Vec<f64> {
        self.space.elem_dofs[slot].iter().map(|&d| self.coeffs[d]).collect()
    }

    /// Value and differential at reference point `xh` of tet `tet`; zero
    /// outside the support of the space.
    pub fn eval_ref(&self, mesh: &TetMesh, tet: usize, xh: Vec3) -> (Vec3, Vec3) {
        let Some(s) = self.space.slot_of(tet) else {
            return ([0.0; 3], [0.0; 3]);
        };
        let g = mesh.geometry(tet);
        let e = self.space.shape.eval(xh);
        let c = self.elem_coeffs(s);
        let mut v = [0.0; 3];
        let mut d = [0.0; 3];
        for i in 0..c.len() {
            for k in 0..3 {
                v[k] += c[i] * e.val[i][k];
                d[k] += c[i] * e.der[i][k];
            }
        }
        (piola_value(self.space.kind, &g, v), piola_der(self.space.kind, &g, d))
    }

    pub fn eval(&self, mesh: &TetMesh, tet: usize, x: Vec3) -> (Vec3, Vec3) {
        let xh = mesh.geometry(tet).pullback_point(x);
        self.eval_ref(mesh, tet, xh)
    }

    /// Values and differentials at the points of a reference tabulation.
    pub fn eval_tab(&self, mesh: &TetMesh, tet: usize, tab: &Tabulation) -> (Vec<Vec3>, Vec<Vec3>) {
        let np = tab.npts;
        let Some(s) = self.space.slot_of(tet) else {
            return (vec![[0.0; 3]; np], vec![[0.0; 3]; np]);
        };
        let g = mesh.geometry(tet);
        let c = DVector::from_vec(self.elem_coeffs(s));
        let rv = &tab.val * &c;
        let rd = &tab.der * &c;
        let mut vals = Vec::with_capacity(np);
        let mut ders = Vec::with_capacity(np);
        for p in 0..np {
            vals.push(piola_value(self.space.kind, &g, [rv[3 * p], rv[3 * p + 1], rv[3 * p + 2]]));
            ders.push(piola_der(self.space.kind, &g, [rd[3 * p], rd[3 * p + 1], rd[3 * p + 2]]));
        }
        (vals, ders)
    }
}

/// A field on a single element, given by local coefficients of a reference shape set.
#[derive(Clone, Debug)]
pub struct ElementField {
    pub kind: SpaceKind,
    pub degree: usize,
    pub tet: usize,
    pub coeffs: Vec<f64>,
}

impl ElementField {
    pub fn eval_ref(&self, g: &TetGeometry, xh: Vec3) -> Result<(Vec3, Vec3)> {
        let s = shape_set(self.kind, self.degree)?;
        let e = s.eval(xh);
        let mut v = [0.0; 3];
        let mut d = [0.0; 3];
        for (i, c) in self.coeffs.iter().enumerate() {
            for k in 0..3 {
                v[k] += c * e.val[i][k];
                d[k] += c * e.der[i][k];
            }
        }
        Ok((piola_value(self.kind, g, v), piola_der(self.kind, g, d)))
    }

    /// Values and differentials at the points of a reference tabulation of
    /// the same space.
    pub fn eval_tab(&self, g: &TetGeometry, tab: &Tabulation) -> (Vec<Vec3>, Vec<Vec3>) {
        let c = DVector::from_column_slice(&self.coeffs);
        let rv = &tab.val * &c;
        let rd = &tab.der * &c;
        (0..tab.npts)
            .map(|p| {
                (
                    piola_value(self.kind, g, [rv[3 * p], rv[3 * p + 1], rv[3 * p + 2]]),
                    piola_der(self.kind, g, [rd[3 * p], rd[3 * p + 1], rd[3 * p + 2]]),
                )
            })
            .unzip()
    }
}

/// Canonical interpolate of `field` in `kind`'s degree-`q` space on tet `k`
/// (the Raviart–Thomas case gives the moment-matching interpolator).
pub fn interpolate_element(
    mesh: &TetMesh,
    kind: SpaceKind,
    q: usize,
    k: usize,
    extra: usize,
    field: &dyn Fn(Vec3) -> Vec3,
) -> Result<ElementField> {
    let g = mesh.geometry(k);
    let coeffs = reference::apply_reference_dofs(kind, q, extra, &|xh| piola_pullback(kind, &g, field(g.map(xh))))?;
    Ok(ElementField { kind, degree: q, tet: k, coeffs })
}

/// Canonical degree-`q` Raviart–Thomas interpolate of `field` on tet `k`.
pub fn rt_interpolate(mesh: &TetMesh, q: usize, k: usize, field: &dyn Fn(Vec3) -> Vec3) -> Result<ElementField> {
    interpolate_element(mesh, SpaceKind::RaviartThomas, q, k, 4, field)
}

/// Elementwise polynomial field in the reference Legendre basis; `ncomp`
/// components per point.
#[derive(Clone, Debug)]
pub struct LocalPolyField {
    pub degree: usize,
    pub ncomp: usize,
    /// Per-element coefficients, `ncomp` interleaved per basis function.
    pub coeffs: HashMap<usize, Vec<f64>>,
}

impl LocalPolyField {
    pub fn eval_ref(&self, tet: usize, xh: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        if let Some(c) = self.coeffs.get(&tet) {
            let (b, _) = reference::poly_basis3(self.degree, xh);
            for (m, bm) in b.iter().enumerate() {
                for k in 0..self.ncomp {
                    out[k] += c[self.ncomp * m + k] * bm;
                }
            }
        }
        out
    }
}

/// Cholesky factor of the reference mass matrix of the Legendre basis of `P_q`.
fn reference_mass(q: usize) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let rule = gauss_rule_tet(2 * q)?;
    let n = reference::dim_p3(q);
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let (b, _) = reference::poly_basis3(q, *p);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w * b[i] * b[j];
            }
        }
    }
    m.cholesky().ok_or_else(|| Error::Factorization("reference mass not SPD".into()))
}

/// Elementwise L2 projection onto `P_q` (componentwise for vector fields)
/// over the listed tetrahedra. `field(tet, x)` is evaluated at the points of
/// a tetrahedron rule of the given exactness.
pub fn l2_project(
    mesh: &TetMesh,
    tets: &[usize],
    q: usize,
    ncomp: usize,
    exactness: usize,
    field: &dyn Fn(usize, Vec3) -> Vec3,
) -> Result<LocalPolyField> {
    let chol = reference_mass(q)?;
    let rule = gauss_rule_tet(exactness.max(2 * q))?;
    let n = reference::dim_p3(q);
    let basis: Vec<Vec<f64>> = rule.points.iter().map(|p| reference::poly_basis3(q, *p).0).collect();
    let mut coeffs = HashMap::new();
    for &k in tets {
        let g = mesh.geometry(k);
        let mut rhs = DMatrix::<f64>::zeros(n, ncomp);
        for (pi, (p, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
            let f = field(k, g.map(*p));
            for i in 0..n {
                for c in 0..ncomp {
                    rhs[(i, c)] += w * basis[pi][i] * f[c];
                }
            }
        }
        let sol = chol.solve(&rhs);
        let mut c = vec![0.0; n * ncomp];
        for i in 0..n {
            for j in 0..ncomp {
                c[ncomp * i + j] = sol[(i, j)];
            }
        }
        coeffs.insert(k, c);
    }
    Ok(LocalPolyField { degree: q, ncomp, coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_structured_cube_mesh, BoundarySpec, TetMesh};

    fn single_tet() -> TetMesh {
        TetMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![[0, 1, 2, 3]], &BoundarySpec::default())
            .unwrap()
    }

    #[test]
    fn global_nd0_free_dofs_are_interior_edges() {
        let m = build_structured_cube_mesh(1).unwrap();
        let s = FeSpace::global(&m, SpaceKind::Nedelec, 0, &m.boundary_faces()).unwrap();
        let interior_edges = m
            .edges
            .iter()
            .filter(|e| !(m.on_boundary[e[0]] && m.on_boundary[e[1]] && {
                // an edge is on the boundary iff it belongs to a boundary face
                (0..m.faces.len()).any(|f| m.is_boundary_face(f) && m.faces[f].contains(&e[0]) && m.faces[f].contains(&e[1]))
            }))
            .count();
        assert_eq!(s.n_free, interior_edges);
    }

    #[test]
    fn single_tet_rt0_has_four_dofs() {
        let m = single_tet();
        let s = FeSpace::global(&m, SpaceKind::RaviartThomas, 0, &vec![false; m.faces.len()]).unwrap();
        assert_eq!(s.n_dofs(), 4);
        assert_eq!(s.n_free, 4);
    }

    #[test]
    fn rt0_reproduces_constants() {
        let m = single_tet();
        let f = rt_interpolate(&m, 0, 0, &|_| [1.0, 0.0, 0.0]).unwrap();
        let g = m.geometry(0);
        let (v, d) = f.eval_ref(&g, [0.2, 0.3, 0.1]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-13 && v[1].abs() < 1e-13 && v[2].abs() < 1e-13);
        assert!(d[0].abs() < 1e-13);
    }

    #[test]
    fn l2_mean_of_barycentric() {
        let m = single_tet();
        let p = l2_project(&m, &[0], 0, 1, 4, &|_, x| [x[0], 0.0, 0.0]).unwrap();
        assert!((p.eval_ref(0, [0.3, 0.3, 0.3])[0] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reference_moments_match_physical_gram() {
        let g = TetGeometry::new(&[[0.1, 0.0, 0.2], [0.9, 0.1, 0.0], [0.2, 1.2, 0.1], [0.3, 0.2, -0.8]]);
        let rule = gauss_rule_tet(6).unwrap();
        let w: Vec<f64> = rule.weights.iter().map(|v| v * g.measure_scale()).collect();
        let pairs = [
            (SpaceKind::Nedelec, 1, false, SpaceKind::Nedelec, 1, false),
            (SpaceKind::Nedelec, 1, true, SpaceKind::Nedelec, 1, true),
            (SpaceKind::Nedelec, 1, true, SpaceKind::RaviartThomas, 1, false),
            (SpaceKind::RaviartThomas, 2, true, SpaceKind::RaviartThomas, 2, true),
            (SpaceKind::Lagrange, 2, true, SpaceKind::Nedelec, 1, false),
        ];
        for (ka, qa, da, kb, qb, db) in pairs {
            let ta = reference::volume_tabulation(ka, qa, 6).unwrap();
            let tb = reference::volume_tabulation(kb, qb, 6).unwrap();
            let pick = |t: &Tabulation, d: bool| if d { t.der.clone() } else { t.val.clone() };
            let mom = ReferenceMoments::new(&pick(&ta, da), &pick(&tb, db), &rule.weights);
            let ea = element_tabulation(ka, &g, &ta);
            let eb = element_tabulation(kb, &g, &tb);
            let direct = weighted_gram(if da { &ea.der } else { &ea.val }, if db { &eb.der } else { &eb.val }, &w);
            let fast = mom.gram(&piola_matrix(ka, &g, da), &piola_matrix(kb, &g, db), g.measure_scale());
            assert!((direct - fast).amax() < 1e-12, "{ka:?} {kb:?}");
        }
    }
}
