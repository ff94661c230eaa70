//! Mixed Nédélec discretization of the curl–curl problem with a gradient
//! multiplier for the gauge.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{cross, dot, mat_t_vec, Vec3};
use crate::linalg::{CsrMatrix, Factorization};
use crate::mesh::{barycentric_gradients, vertex_patch, BoundaryTag, PatchKind, TetMesh};
use crate::quadrature::gauss_rule_tet;
use crate::spaces::reference::volume_tabulation;
use crate::spaces::{element_tabulation, piola_matrix, CoefficientField, FeSpace, ReferenceMoments, SpaceKind};

type VecFn = Arc<dyn Fn(Vec3) -> Vec3 + Send + Sync>;
type ScalarFn = Arc<dyn Fn(Vec3) -> f64 + Send + Sync>;

/// Quadrature exactness settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadConfig {
    /// Polynomial integrands of degree-`q` fields use exactness `2q + volume_extra`.
    pub volume_extra: usize,
    /// Integrals involving the data use exactness `2(p+1) + data_extra`.
    pub data_extra: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig { volume_extra: 4, data_extra: 8 }
    }
}

impl QuadConfig {
    pub fn volume(&self, q: usize) -> usize {
        2 * q + self.volume_extra
    }

    pub fn data(&self, p: usize) -> usize {
        2 * (p + 1) + self.data_extra
    }
}

/// The current density `j`.
#[derive(Clone)]
pub struct CurrentDensity {
    f: VecFn,
    /// Degree `p` when `j` is known to be a piecewise `RT_p` field.
    pub rt_degree: Option<usize>,
    div: Option<ScalarFn>,
}

impl std::fmt::Debug for CurrentDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurrentDensity").field("rt_degree", &self.rt_degree).finish()
    }
}

impl CurrentDensity {
    pub fn new(f: impl Fn(Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        CurrentDensity { f: Arc::new(f), rt_degree: None, div: None }
    }

    pub fn zero() -> Self {
        Self::constant([0.0; 3])
    }

    pub fn constant(v: Vec3) -> Self {
        CurrentDensity { f: Arc::new(move |_| v), rt_degree: Some(0), div: Some(Arc::new(|_| 0.0)) }
    }

    /// Mark as a piecewise Raviart–Thomas field of the given degree.
    pub fn with_rt_degree(mut self, p: usize) -> Self {
        self.rt_degree = Some(p);
        self
    }

    pub fn with_divergence(mut self, d: impl Fn(Vec3) -> f64 + Send + Sync + 'static) -> Self {
        self.div = Some(Arc::new(d));
        self
    }

    pub fn eval(&self, x: Vec3) -> Vec3 {
        (self.f)(x)
    }

    pub fn divergence(&self, x: Vec3) -> Option<f64> {
        self.div.as_ref().map(|d| d(x))
    }

    /// Whether `j` lies in `RT_p` for the given `p`.
    pub fn is_piecewise_rt(&self, p: usize) -> bool {
        self.rt_degree.is_some_and(|q| q <= p)
    }
}

/// Values of a vector field at the points of the data rule on every tet.
#[derive(Clone, Debug)]
pub struct DataField {
    pub exactness: usize,
    pub values: Vec<Vec<Vec3>>,
}

#[derive(Clone, Debug)]
pub struct MagneticPotentialSolution {
    pub degree: usize,
    pub quad: QuadConfig,
    pub a_h: CoefficientField,
    pub multiplier: CoefficientField,
    /// `|grad s_h|` and `|j|` over the domain.
    pub multiplier_norm: f64,
    pub j_norm: f64,
    /// Max relative residual of the assembled saddle system.
    pub solver_residual: f64,
    /// `j` at the data points.
    pub j_data: DataField,
    /// `j - grad s_h` at the data points: the current the discrete potential
    /// is in exact Galerkin balance with.
    pub j_eff: DataField,
}

impl MagneticPotentialSolution {
    pub fn nd_space(&self) -> &Arc<FeSpace> {
        &self.a_h.space
    }

    pub fn multiplier_relative(&self) -> f64 {
        if self.j_norm > 0.0 {
            self.multiplier_norm / self.j_norm
        } else {
            self.multiplier_norm
        }
    }
}

/// Multiplier norms above this fraction of `|j|` are reported as data incompatibility.
pub const MULTIPLIER_TOLERANCE: f64 = 1e-8;

struct ElementSystem {
    k: DMatrix<f64>,
    g: DMatrix<f64>,
    f: DVector<f64>,
    jvals: Vec<Vec3>,
}

fn assemble(trips: &mut Vec<(usize, usize, f64)>, a: &DMatrix<f64>, rows: &[Option<usize>], cols: &[Option<usize>]) {
    for (i, gi) in rows.iter().enumerate() {
        let Some(gi) = *gi else { continue };
        for (jj, gj) in cols.iter().enumerate() {
            if let Some(gj) = *gj {
                trips.push((gi, gj, a[(i, jj)]));
            }
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Galerkin solution of the gauged curl-curl problem with `ND_p` potential
/// and `P_{p+1}` gradient multiplier.
///
/// Testing the first equation with gradients decouples the multiplier:
/// `(grad s_h, grad q) = (j, grad q)`. The potential then solves
/// `(curl A_h, curl v) = (j - grad s_h, v)`, whose right-hand side vanishes
/// on gradients, so the regularized iteration
/// `(K + eps M) dA = f - K A` keeps `A_h` orthogonal to gradients and
/// converges to the gauged solution. Both systems are SPD.
pub fn solve_magnetic_potential(
    mesh: &TetMesh,
    p: usize,
    j: &CurrentDensity,
    quad: QuadConfig,
) -> Result<MagneticPotentialSolution> {
    let dir = mesh.faces_tagged(BoundaryTag::Dirichlet);
    let nd = Arc::new(FeSpace::global(mesh, SpaceKind::Nedelec, p, &dir)?);
    let mut lag = FeSpace::global(mesh, SpaceKind::Lagrange, p + 1, &dir)?;
    if !dir.iter().any(|&d| d) {
        lag.pin_dof(0);
    }
    let lag = Arc::new(lag);
    let ev = quad.volume(p + 1);
    let ed = quad.data(p);
    let rule_v = gauss_rule_tet(ev)?;
    let rule_d = gauss_rule_tet(ed)?;
    let nd_v = volume_tabulation(SpaceKind::Nedelec, p, ev)?;
    let nd_d = volume_tabulation(SpaceKind::Nedelec, p, ed)?;
    let lg_v = volume_tabulation(SpaceKind::Lagrange, p + 1, ev)?;
    let lg_d = volume_tabulation(SpaceKind::Lagrange, p + 1, ed)?;
    let w = &rule_v.weights;
    let mom_k = ReferenceMoments::new(&nd_v.der, &nd_v.der, w);
    let mom_g = ReferenceMoments::new(&nd_v.val, &lg_v.der, w);

    let elems: Vec<ElementSystem> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|k| {
            let g = mesh.geometry(k);
            let det = g.measure_scale();
            let nv = piola_matrix(SpaceKind::Nedelec, &g, false);
            let nc = piola_matrix(SpaceKind::Nedelec, &g, true);
            let lg = piola_matrix(SpaceKind::Lagrange, &g, true);
            let jvals: Vec<Vec3> = rule_d.points.iter().map(|x| j.eval(g.map(*x))).collect();
            // (j, A v^) = (A^T j, v^): pull the data back once per point
            let mut u = DVector::zeros(3 * jvals.len());
            for (q, jv) in jvals.iter().enumerate() {
                let a = mat_t_vec(&nv, *jv);
                for c in 0..3 {
                    u[3 * q + c] = rule_d.weights[q] * det * a[c];
                }
            }
            let f = nd_d.val.tr_mul(&u);
            ElementSystem {
                k: mom_k.gram(&nc, &nc, det),
                g: mom_g.gram(&nv, &lg, det),
                f,
                jvals,
            }
        })
        .collect();

    let na = nd.n_free;
    let ns = lag.n_free;
    let (mut kt, mut gt) = (Vec::new(), Vec::new());
    let mut f = vec![0.0; na];
    for (k, e) in elems.iter().enumerate() {
        let fa = nd.elem_free(k);
        let fs = lag.elem_free(k);
        assemble(&mut kt, &e.k, &fa, &fa);
        assemble(&mut gt, &e.g, &fa, &fs);
        for (i, gi) in fa.iter().enumerate() {
            if let Some(gi) = *gi {
                f[gi] += e.f[i];
            }
        }
    }
    let clock = std::time::Instant::now();
    // full mixed system [[K, G], [G^T, 0]] with right-hand side [f; 0]
    let n = na + ns;
    let mut st = kt;
    for &(r, c, v) in &gt {
        st.push((r, na + c, v));
        st.push((na + c, r, v));
    }
    let saddle = CsrMatrix::from_triplets(n, n, st);
    let mut rhs = f.clone();
    rhs.resize(n, 0.0);
    let bn = max_abs(&rhs).max(f64::MIN_POSITIVE);
    let refined = |fact: &Factorization| -> Result<(Vec<f64>, f64)> {
        let x = fact.solve_refined(&rhs, None, 5)?;
        let r: Vec<f64> = rhs.iter().zip(saddle.mul_vec(&x)).map(|(b, k)| b - k).collect();
        Ok((x, max_abs(&r) / bn))
    };
    let mut solved = Factorization::symmetric(&saddle).and_then(|f| refined(&f));
    if !matches!(solved, Ok((_, r)) if r < 1e-10) {
        log::debug!("symmetric indefinite factorization inadequate, falling back to LU");
        solved = Factorization::new(&saddle).and_then(|f| refined(&f));
    }
    let (x, solver_residual) = solved?;
    log::debug!("saddle system of size {n} solved in {:.2?}, residual {solver_residual:.2e}", clock.elapsed());
    if !(solver_residual < 1e-6) {
        return Err(Error::Factorization(format!("curl-curl system residual {solver_residual:.3e}")));
    }
    let (a, s_free) = x.split_at(na);
    let a_h = CoefficientField::new(nd.clone(), nd.expand(a))?;
    let multiplier = CoefficientField::new(lag.clone(), lag.expand(s_free))?;

    let mut m2 = 0.0;
    let mut j2 = 0.0;
    let mut eff = Vec::with_capacity(mesh.num_tets());
    let mut raw = Vec::with_capacity(mesh.num_tets());
    for (k, e) in elems.into_iter().enumerate() {
        let det = mesh.geometry(k).measure_scale();
        let (_, grads) = multiplier.eval_tab(mesh, k, &lg_d);
        let mut vals = Vec::with_capacity(e.jvals.len());
        for (pt, jv) in e.jvals.iter().enumerate() {
            let w = rule_d.weights[pt] * det;
            m2 += w * dot(grads[pt], grads[pt]);
            j2 += w * dot(*jv, *jv);
            vals.push([jv[0] - grads[pt][0], jv[1] - grads[pt][1], jv[2] - grads[pt][2]]);
        }
        eff.push(vals);
        raw.push(e.jvals);
    }
    let sol = MagneticPotentialSolution {
        degree: p,
        quad,
        a_h,
        multiplier,
        multiplier_norm: m2.sqrt(),
        j_norm: j2.sqrt(),
        solver_residual,
        j_data: DataField { exactness: ed, values: raw },
        j_eff: DataField { exactness: ed, values: eff },
    };
    if sol.multiplier_relative() > MULTIPLIER_TOLERANCE {
        log::warn!(
            "gradient multiplier |grad s_h| / |j| = {:.3e}: j is not discretely divergence-free; continuing with j - grad s_h",
            sol.multiplier_relative()
        );
    }
    Ok(sol)
}

/// Max over free basis functions of `|(curl A_h, curl v) + (grad s_h, v) - (j, v)|`,
/// relative to the largest load entry.
pub fn galerkin_residual(mesh: &TetMesh, sol: &MagneticPotentialSolution) -> Result<f64> {
    let p = sol.degree;
    let nd = sol.nd_space();
    let ed = sol.j_data.exactness;
    let rule = gauss_rule_tet(ed)?;
    let tab = volume_tabulation(SpaceKind::Nedelec, p, ed)?;
    let lg = volume_tabulation(SpaceKind::Lagrange, p + 1, ed)?;
    let mut res = vec![0.0; nd.n_free];
    let mut load = vec![0.0; nd.n_free];
    for k in 0..mesh.num_tets() {
        let g = mesh.geometry(k);
        let det = g.measure_scale();
        let et = element_tabulation(SpaceKind::Nedelec, &g, &tab);
        let (_, curl) = sol.a_h.eval_tab(mesh, k, &tab);
        let (_, gs) = sol.multiplier.eval_tab(mesh, k, &lg);
        let fr = nd.elem_free(k);
        for pt in 0..rule.len() {
            let w = rule.weights[pt] * det;
            let jv = sol.j_data.values[k][pt];
            for (i, gi) in fr.iter().enumerate() {
                let Some(gi) = *gi else { continue };
                let v = [et.val[(3 * pt, i)], et.val[(3 * pt + 1, i)], et.val[(3 * pt + 2, i)]];
                let c = [et.der[(3 * pt, i)], et.der[(3 * pt + 1, i)], et.der[(3 * pt + 2, i)]];
                res[gi] += w * (dot(curl[pt], c) + dot(gs[pt], v) - dot(jv, v));
                load[gi] += w * dot(jv, v);
            }
        }
    }
    let scale = load.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    Ok(res.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale)
}

/// Residual of the patchwise orthogonality identity
/// `(psi_a j, grad q) + (grad psi_a x curl A_h, grad q) = 0` over hat-function
/// bases of `P_1(T_a) ∩ H^1_*(omega_a)`, maximized over vertices and scaled by
/// the Cauchy–Schwarz bound of the two terms.
pub fn check_patch_orthogonality(mesh: &TetMesh, sol: &MagneticPotentialSolution) -> Result<f64> {
    let p = sol.degree;
    let ed = sol.j_eff.exactness;
    let rule = gauss_rule_tet(ed)?;
    let tab = volume_tabulation(SpaceKind::Nedelec, p, ed)?;
    let curls: Vec<Vec<Vec3>> = (0..mesh.num_tets()).map(|k| sol.a_h.eval_tab(mesh, k, &tab).1).collect();
    let worst = (0..mesh.num_vertices())
        .into_par_iter()
        .map(|a| {
            let patch = vertex_patch(mesh, a);
            let excluded: Vec<usize> = if patch.kind == PatchKind::DirichletBoundary {
                patch.gamma_d.iter().flat_map(|&f| mesh.faces[f]).collect()
            } else {
                Vec::new()
            };
            let mut worst: f64 = 0.0;
            for b in patch.vertices(mesh) {
                if excluded.contains(&b) {
                    continue;
                }
                let (mut r, mut nj, mut nt, mut nq) = (0.0, 0.0, 0.0, 0.0);
                for &k in &patch.tets {
                    let t = mesh.tets[k];
                    let la = t.iter().position(|&v| v == a).unwrap();
                    let grads = barycentric_gradients(mesh, k);
                    let ga = grads[la];
                    let gb = t.iter().position(|&v| v == b).map_or([0.0; 3], |lb| grads[lb]);
                    let det = mesh.geometry(k).measure_scale();
                    for (pt, x) in rule.points.iter().enumerate() {
                        let w = rule.weights[pt] * det;
                        let lam = [1.0 - x[0] - x[1] - x[2], x[0], x[1], x[2]];
                        let pj = crate::geometry::scale(lam[la], sol.j_eff.values[k][pt]);
                        let tau = cross(ga, curls[k][pt]);
                        r += w * (dot(pj, gb) + dot(tau, gb));
                        nj += w * dot(pj, pj);
                        nt += w * dot(tau, tau);
                        nq += w * dot(gb, gb);
                    }
                }
                let s = (nj.sqrt() + nt.sqrt()) * nq.sqrt();
                if s > 0.0 {
                    worst = worst.max(r.abs() / s);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_cube_mesh;

    #[test]
    fn zero_current_gives_zero_potential() {
        let m = build_structured_cube_mesh(1).unwrap();
        let s = solve_magnetic_potential(&m, 1, &CurrentDensity::zero(), QuadConfig::default()).unwrap();
        assert!(s.a_h.coeffs.iter().all(|c| c.abs() < 1e-14));
        assert_eq!(check_patch_orthogonality(&m, &s).unwrap(), 0.0);
    }

    #[test]
    fn constant_current_galerkin_and_orthogonality() {
        let m = build_structured_cube_mesh(2).unwrap();
        let s = solve_magnetic_potential(&m, 1, &CurrentDensity::constant([0.0, 0.0, 1.0]), QuadConfig::default()).unwrap();
        assert!(galerkin_residual(&m, &s).unwrap() < 1e-10);
        assert!(s.multiplier_relative() < 1e-10);
        let m1 = build_structured_cube_mesh(1).unwrap();
        let mut s1 = solve_magnetic_potential(&m1, 1, &CurrentDensity::constant([0.0, 0.0, 1.0]), QuadConfig::default()).unwrap();
        assert!(check_patch_orthogonality(&m1, &s1).unwrap() < 1e-9);
        for i in 0..s1.a_h.coeffs.len() {
            if !s1.a_h.space.fixed[i] {
                s1.a_h.coeffs[i] += 0.1 * ((i * 7919 % 13) as f64 - 6.0);
            }
        }
        let r = check_patch_orthogonality(&m1, &s1).unwrap();
        assert!(r > 1e-3, "{r}");
    }
}
