//! Patchwise equilibration: divergence-free decomposition of the current into
//! patch contributions, then curl-constrained local minimizations whose sum is
//! the equilibrated flux.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{add, cross, dot, mat_t_vec, norm, scale, sub, Vec3};
use crate::linalg::{dump_problem, solve_constrained_ls, ConstrainedLsProblem, CsrMatrix, LsSolution, SparseSymMatrix};
use crate::mesh::{barycentric, barycentric_gradients, vertex_patch, BoundaryTag, TetMesh, VertexPatch, LOCAL_FACES};
use crate::quadrature::{gauss_rule_tet, gauss_rule_tri, QuadratureRule};
use crate::solver::{CurrentDensity, MagneticPotentialSolution};
use crate::spaces::reference::{apply_reference_dofs_multi, ortho_basis3, shape_set, volume_tabulation};
use crate::spaces::{
    face_trace_dofs, l2_project, piola_matrix, CoefficientField, ElementField, FeSpace, ReferenceMoments, SpaceKind,
    Tabulation,
};

/// Degree of the first-step Raviart–Thomas space.
pub fn p_hat(p: usize) -> usize {
    p.max(1)
}

#[derive(Clone, Debug)]
pub struct EquilibrationOptions {
    /// Run every per-patch post-check instead of a deterministic sample.
    pub verify: bool,
    /// In sampled mode, patches with `a % sample_stride == 0` are checked.
    pub sample_stride: usize,
    /// Write every local problem to `patch_<vertex>_<stage>.txt` here.
    pub dump_dir: Option<PathBuf>,
}

impl Default for EquilibrationOptions {
    fn default() -> Self {
        EquilibrationOptions { verify: false, sample_stride: 10, dump_dir: None }
    }
}

#[derive(Clone, Debug)]
pub struct ThetaPatch {
    pub vertex: usize,
    pub field: CoefficientField,
    pub objective: f64,
    pub constraint_residual: f64,
}

#[derive(Clone, Debug)]
pub struct FluxPatch {
    pub vertex: usize,
    pub field: CoefficientField,
    pub objective: f64,
    pub constraint_residual: f64,
    /// `h_omega |curl h^a - j_h^a|`.
    pub eta_osc_jh: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OscillationTerms {
    pub eta_osc_j: f64,
    pub eta_osc_j_tilde: f64,
    pub eta_osc_jh: f64,
}

/// Post-check residuals. Field residuals are relative to `max |j|`; integral
/// ones additionally to the element volume.
#[derive(Clone, Debug, Default)]
pub struct PostChecks {
    pub piecewise_rt: bool,
    pub checked_patches: usize,
    pub theta_constraint: f64,
    pub flux_constraint: f64,
    pub delta_div: f64,
    pub delta_moments: f64,
    pub delta_split: f64,
    pub decomposition: f64,
    pub jh_div: f64,
    pub jh_trace: f64,
    pub tangential_jump: f64,
    pub equilibration_residual: f64,
}

pub const LOCAL_TOLERANCE: f64 = 1e-9;
pub const GLOBAL_TOLERANCE: f64 = 1e-10;

impl PostChecks {
    /// Descriptions of every violated check. The decomposition and
    /// equilibration identities only hold exactly for piecewise
    /// Raviart–Thomas data and are skipped otherwise.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64, tol: f64| {
            if !(v <= tol) {
                out.push(format!("{name} = {v:.3e} exceeds {tol:.0e}"));
            }
        };
        check("theta constraint residual", self.theta_constraint, LOCAL_TOLERANCE);
        check("flux constraint residual", self.flux_constraint, LOCAL_TOLERANCE);
        check("div delta", self.delta_div, LOCAL_TOLERANCE);
        check("delta moments", self.delta_moments, LOCAL_TOLERANCE);
        check("delta split", self.delta_split, LOCAL_TOLERANCE);
        check("tangential jump", self.tangential_jump, GLOBAL_TOLERANCE);
        if self.piecewise_rt {
            check("patch decomposition", self.decomposition, LOCAL_TOLERANCE);
            check("div j_h^a", self.jh_div, LOCAL_TOLERANCE);
            check("normal trace of j_h^a", self.jh_trace, LOCAL_TOLERANCE);
            check("equilibration residual", self.equilibration_residual, GLOBAL_TOLERANCE);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct EquilibratedFlux {
    pub sigma: CoefficientField,
    pub contributions: Vec<FluxPatch>,
}

#[derive(Clone, Debug)]
pub struct EquilibrationResult {
    pub degree: usize,
    pub theta: Vec<ThetaPatch>,
    pub delta: CoefficientField,
    /// `delta_elem[k][l]`: contribution of local vertex `l` on tet `k`.
    pub delta_elem: Vec<Vec<ElementField>>,
    pub flux: EquilibratedFlux,
    pub osc: Vec<OscillationTerms>,
    pub checks: PostChecks,
}

fn face_mask(mesh: &TetMesh, faces: &[usize]) -> Vec<bool> {
    let mut m = vec![false; mesh.faces.len()];
    for &f in faces {
        m[f] = true;
    }
    m
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Constraint residual relative to `|d| + |C| |x|`.
pub fn relative_constraint_residual(p: &ConstrainedLsProblem, x: &[f64]) -> f64 {
    let s = inf_norm(&p.d) + p.c.norm_inf() * inf_norm(x);
    if s > 0.0 {
        p.constraint_residual(x) / s
    } else {
        0.0
    }
}

fn dense_to_trips(m: &DMatrix<f64>, map: &[Option<usize>], out: &mut Vec<(usize, usize, f64)>) {
    for (i, gi) in map.iter().enumerate() {
        let Some(gi) = *gi else { continue };
        for (j, gj) in map.iter().enumerate() {
            if let Some(gj) = *gj {
                out.push((gi, gj, m[(i, j)]));
            }
        }
    }
}

type DofCache = Mutex<HashMap<(usize, usize, usize), Arc<DMatrix<f64>>>>;

/// Degree-`q` Raviart–Thomas DOFs of `lambda_l phi_j` for the reference
/// degree-`qs` shape functions `phi_j`. The contravariant Piola map commutes
/// with multiplication by barycentric coordinates, so this gives the
/// interpolate of `psi_a v` from the element coefficients of `v` on any tet.
fn hat_product_dofs(qs: usize, q: usize, l: usize) -> Result<Arc<DMatrix<f64>>> {
    static CACHE: OnceLock<DofCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(m) = cache.lock().unwrap().get(&(qs, q, l)) {
        return Ok(m.clone());
    }
    let shape = shape_set(SpaceKind::RaviartThomas, qs)?;
    let n = shape.ndof();
    let m = apply_reference_dofs_multi(SpaceKind::RaviartThomas, q, 4, n, &|x| {
        let lam = [1.0 - x[0] - x[1] - x[2], x[0], x[1], x[2]][l];
        shape.eval(x).val.into_iter().map(|v| scale(lam, v)).collect()
    })?;
    let m = Arc::new(m);
    Ok(cache.lock().unwrap().entry((qs, q, l)).or_insert(m).clone())
}

/// Element integrals shared by the patches around one tet. Integrands not
/// involving the current use the polynomial rule; the current enters through
/// the data rule.
struct TetData {
    /// `RT_phat` mass matrix.
    th_m: DMatrix<f64>,
    /// `(div phi_i, s_m)`.
    th_div: DMatrix<f64>,
    /// `(phi_i, e_l)`.
    th_mom: DMatrix<f64>,
    /// Rows `sum w (curl A_h x phi_i)`, so that `(grad psi x curl A_h, phi_i) = th_w g`.
    th_w: DMatrix<f64>,
    /// `sum w (|c|^2 I - c c^T)` for `c = curl A_h`.
    th_g: DMatrix<f64>,
    th_c: Vec3,
    /// `(s_m, j~)` componentwise.
    th_j: DMatrix<f64>,
    /// `ND_{p+1}` mass and curl-curl matrices.
    fl_m: DMatrix<f64>,
    fl_k: DMatrix<f64>,
    /// `(lambda_l curl A_h, phi_i)`.
    fl_t: DMatrix<f64>,
    fl_c0: [f64; 4],
    /// `(lambda_l j~, curl phi_i)`.
    fl_j: DMatrix<f64>,
    /// `(psi_j, curl phi_i)` for the `RT_phat` and `RT_{p+1}` bases.
    fl_x: DMatrix<f64>,
    fl_y: DMatrix<f64>,
}

/// Reference moments behind [`TetData`] and [`DeltaTetSystem`].
struct ReferenceData {
    theta_mass: ReferenceMoments,
    flux_mass: ReferenceMoments,
    flux_curl: ReferenceMoments,
    flux_theta: ReferenceMoments,
    flux_delta: ReferenceMoments,
    delta_mass: ReferenceMoments,
    /// `sum w div^ phi_i s_m` for `RT_phat` and `RT_{p+1}`.
    theta_div: DMatrix<f64>,
    delta_div: DMatrix<f64>,
    /// `sum w phi^_i`, one row per component.
    theta_mom: DMatrix<f64>,
}

impl ReferenceData {
    fn new(p: usize, poly: &QuadratureRule, ep: usize) -> Result<Self> {
        let w = &poly.weights;
        let th = volume_tabulation(SpaceKind::RaviartThomas, p_hat(p), ep)?;
        let de = volume_tabulation(SpaceKind::RaviartThomas, p + 1, ep)?;
        let fl = volume_tabulation(SpaceKind::Nedelec, p + 1, ep)?;
        let div = |t: &Tabulation, q: usize| {
            let s: Vec<Vec<f64>> = poly.points.iter().map(|x| ortho_basis3(q, *x)).collect();
            DMatrix::from_fn(s[0].len(), t.der.ncols(), |m, i| (0..w.len()).map(|k| w[k] * t.der[(3 * k, i)] * s[k][m]).sum())
        };
        Ok(ReferenceData {
            theta_mass: ReferenceMoments::new(&th.val, &th.val, w),
            flux_mass: ReferenceMoments::new(&fl.val, &fl.val, w),
            flux_curl: ReferenceMoments::new(&fl.der, &fl.der, w),
            flux_theta: ReferenceMoments::new(&fl.der, &th.val, w),
            flux_delta: ReferenceMoments::new(&fl.der, &de.val, w),
            delta_mass: ReferenceMoments::new(&de.val, &de.val, w),
            theta_div: div(&th, p_hat(p)),
            delta_div: div(&de, p + 1),
            theta_mom: DMatrix::from_fn(3, th.val.ncols(), |a, i| (0..w.len()).map(|k| w[k] * th.val[(3 * k + a, i)]).sum()),
        })
    }
}

/// Element data of the four problems splitting `delta` on one tet.
pub struct DeltaTetSystem {
    pub tet: usize,
    m: DMatrix<f64>,
    c_div: DMatrix<f64>,
    /// Degree-`(p+1)` DOFs of `lambda_l delta`.
    interp: Vec<DVector<f64>>,
    t: Vec<DVector<f64>>,
    c0: [f64; 4],
    /// Relative defect of `int grad lambda_l . delta + lambda_l div delta`.
    pub defect: [f64; 4],
}

/// Local problems of the equilibration for one discrete potential.
pub struct Equilibrator<'a> {
    pub mesh: &'a TetMesh,
    pub sol: &'a MagneticPotentialSolution,
    pub j: &'a CurrentDensity,
    pub p: usize,
    pub opts: EquilibrationOptions,
    pub patches: Vec<VertexPatch>,
    /// Data rule and tabulations on it.
    rule: Arc<QuadratureRule>,
    rt_theta: Arc<Tabulation>,
    rt_delta: Arc<Tabulation>,
    nd_flux: Arc<Tabulation>,
    s_theta: Vec<Vec<f64>>,
    lam: Vec<[f64; 4]>,
    /// Polynomial rule and tabulations on it.
    poly: Arc<QuadratureRule>,
    poly_lam: Vec<[f64; 4]>,
    polytab_nd_p: Arc<Tabulation>,
    polytab_theta: Arc<Tabulation>,
    polytab_delta: Arc<Tabulation>,
    polytab_flux: Arc<Tabulation>,
    refs: ReferenceData,
    tets: Vec<TetData>,
    scale: f64,
}

fn lambda_table(rule: &QuadratureRule) -> Vec<[f64; 4]> {
    (0..rule.len())
        .map(|q| {
            let b = rule.barycentric(q);
            [b[0], b[1], b[2], b[3]]
        })
        .collect()
}

impl<'a> Equilibrator<'a> {
    pub fn new(
        mesh: &'a TetMesh,
        sol: &'a MagneticPotentialSolution,
        j: &'a CurrentDensity,
        opts: EquilibrationOptions,
    ) -> Result<Self> {
        let p = sol.degree;
        let ph = p_hat(p);
        let ed = sol.j_eff.exactness;
        // polynomial integrands below have degree at most 2p + 4
        let ep = sol.quad.volume(p + 1).max(2 * p + 4);
        let rule = gauss_rule_tet(ed)?;
        let poly = gauss_rule_tet(ep)?;
        let patches = (0..mesh.num_vertices()).into_par_iter().map(|a| vertex_patch(mesh, a)).collect();
        let scale = sol.j_data.values.iter().flatten().map(|v| norm(*v)).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        let mut eq = Equilibrator {
            mesh,
            sol,
            j,
            p,
            opts,
            patches,
            s_theta: rule.points.iter().map(|x| ortho_basis3(ph, *x)).collect(),
            lam: lambda_table(&rule),
            rule,
            rt_theta: volume_tabulation(SpaceKind::RaviartThomas, ph, ed)?,
            rt_delta: volume_tabulation(SpaceKind::RaviartThomas, p + 1, ed)?,
            nd_flux: volume_tabulation(SpaceKind::Nedelec, p + 1, ed)?,
            refs: ReferenceData::new(p, &poly, ep)?,
            poly_lam: lambda_table(&poly),
            poly,
            polytab_nd_p: volume_tabulation(SpaceKind::Nedelec, p, ep)?,
            polytab_theta: volume_tabulation(SpaceKind::RaviartThomas, ph, ep)?,
            polytab_delta: volume_tabulation(SpaceKind::RaviartThomas, p + 1, ep)?,
            polytab_flux: volume_tabulation(SpaceKind::Nedelec, p + 1, ep)?,
            tets: Vec::new(),
            scale,
        };
        eq.tets = (0..mesh.num_tets()).into_par_iter().map(|k| eq.tet_data(k)).collect();
        Ok(eq)
    }

    fn tet_data(&self, k: usize) -> TetData {
        let mesh = self.mesh;
        let r = &self.refs;
        let g = mesh.geometry(k);
        let det = g.measure_scale();
        let sg = g.det.signum();
        let curl = self.sol.a_h.eval_tab(mesh, k, &self.polytab_nd_p).1;
        let nd_val = piola_matrix(SpaceKind::Nedelec, &g, false);
        let nd_der = piola_matrix(SpaceKind::Nedelec, &g, true);
        let rt_val = piola_matrix(SpaceKind::RaviartThomas, &g, false);
        let np = self.poly.len();
        let mut uw = DMatrix::zeros(3 * np, 3);
        let mut ut = DMatrix::zeros(3 * np, 4);
        let mut th_g = DMatrix::zeros(3, 3);
        let mut th_c = [0.0; 3];
        let mut fl_c0 = [0.0; 4];
        for (q, c) in curl.iter().enumerate() {
            let w = self.poly.weights[q] * det;
            let cc = dot(*c, *c);
            for a in 0..3 {
                th_c[a] += w * c[a];
                th_g[(a, a)] += w * cc;
                for b in 0..3 {
                    th_g[(a, b)] -= w * c[a] * c[b];
                }
            }
            // (c x A v)_a for the columns of A = J / det
            for s in 0..3 {
                let col = cross(*c, [rt_val[0][s], rt_val[1][s], rt_val[2][s]]);
                for a in 0..3 {
                    uw[(3 * q + s, a)] = w * col[a];
                }
            }
            let lam = self.poly_lam[q];
            let pc = mat_t_vec(&nd_val, *c);
            for l in 0..4 {
                fl_c0[l] += w * lam[l] * lam[l] * cc;
                for s in 0..3 {
                    ut[(3 * q + s, l)] = w * lam[l] * pc[s];
                }
            }
        }
        let wd = self.weights(k);
        let jt = &self.sol.j_eff.values[k];
        let ns = self.s_theta[0].len();
        let mut th_j = DMatrix::zeros(ns, 3);
        let mut uj = DMatrix::zeros(3 * wd.len(), 4);
        for (q, &w) in wd.iter().enumerate() {
            let jq = jt[q];
            for m in 0..ns {
                for a in 0..3 {
                    th_j[(m, a)] += w * self.s_theta[q][m] * jq[a];
                }
            }
            let uq = scale(w, mat_t_vec(&nd_der, jq));
            for l in 0..4 {
                for a in 0..3 {
                    uj[(3 * q + a, l)] = self.lam[q][l] * uq[a];
                }
            }
        }
        let jm = DMatrix::from_fn(3, 3, |a, b| sg * g.jac[a][b]);
        TetData {
            th_m: r.theta_mass.gram(&rt_val, &rt_val, det),
            th_div: &r.theta_div * sg,
            th_mom: jm * &r.theta_mom,
            th_w: self.polytab_theta.val.tr_mul(&uw),
            th_g,
            th_c,
            th_j,
            fl_m: r.flux_mass.gram(&nd_val, &nd_val, det),
            fl_k: r.flux_curl.gram(&nd_der, &nd_der, det),
            fl_t: self.polytab_flux.val.tr_mul(&ut),
            fl_c0,
            fl_j: self.nd_flux.der.tr_mul(&uj),
            fl_x: r.flux_theta.gram(&nd_der, &rt_val, det),
            fl_y: r.flux_delta.gram(&nd_der, &rt_val, det),
        }
    }

    fn weights(&self, k: usize) -> Vec<f64> {
        let det = self.mesh.geometry(k).measure_scale();
        self.rule.weights.iter().map(|w| w * det).collect()
    }

    fn local_index(&self, a: usize, k: usize) -> usize {
        self.mesh.tets[k].iter().position(|&v| v == a).expect("vertex belongs to tet")
    }

    fn checked(&self, a: usize) -> bool {
        self.opts.verify || a % self.opts.sample_stride.max(1) == 0
    }

    fn dump(&self, a: usize, stage: &str, p: &ConstrainedLsProblem) -> Result<()> {
        if let Some(dir) = &self.opts.dump_dir {
            dump_problem(p, dir.join(format!("patch_{a}_{stage}.txt")))?;
        }
        Ok(())
    }

    /// Step 1 problem: minimize `|v - grad psi_a x curl A_h|` over the patch
    /// Raviart–Thomas space with elementwise divergence and constant-moment constraints.
    pub fn theta_problem(&self, a: usize) -> Result<(Arc<FeSpace>, ConstrainedLsProblem)> {
        let mesh = self.mesh;
        let patch = &self.patches[a];
        let constrained = face_mask(mesh, &patch.constrained_faces());
        let space = Arc::new(FeSpace::on_tets(mesh, SpaceKind::RaviartThomas, p_hat(self.p), &patch.tets, &constrained)?);
        let n = space.n_free;
        let (mut mt, mut ct) = (Vec::new(), Vec::new());
        let mut t = vec![0.0; n];
        let mut d = Vec::new();
        let mut c0 = 0.0;
        for (s, &k) in patch.tets.iter().enumerate() {
            let td = &self.tets[k];
            let ga = barycentric_gradients(mesh, k)[self.local_index(a, k)];
            let gv = DVector::from_column_slice(&ga);
            let fr = space.elem_free(s);
            dense_to_trips(&td.th_m, &fr, &mut mt);
            let tw = &td.th_w * &gv;
            c0 += gv.dot(&(&td.th_g * &gv));
            for (i, gi) in fr.iter().enumerate() {
                if let Some(gi) = *gi {
                    t[gi] += tw[i];
                }
            }
            let dj = &td.th_j * &gv;
            for m in 0..td.th_div.nrows() {
                let row = d.len();
                d.push(-dj[m]);
                for (i, gi) in fr.iter().enumerate() {
                    if let Some(gi) = *gi {
                        ct.push((row, gi, td.th_div[(m, i)]));
                    }
                }
            }
            let mom = cross(ga, td.th_c);
            for l in 0..3 {
                let row = d.len();
                d.push(mom[l]);
                for (i, gi) in fr.iter().enumerate() {
                    if let Some(gi) = *gi {
                        ct.push((row, gi, td.th_mom[(l, i)]));
                    }
                }
            }
        }
        let c = CsrMatrix::from_triplets(d.len(), n, ct);
        let mut prob = ConstrainedLsProblem::new(SparseSymMatrix::from_triplets(n, mt)?, t, c, d);
        prob.c0 = Some(c0);
        Ok((space, prob))
    }

    pub fn solve_theta_patch(&self, a: usize) -> Result<ThetaPatch> {
        let (space, prob) = self.theta_problem(a)?;
        self.dump(a, "theta", &prob)?;
        let sol = solve_constrained_ls(&prob).map_err(|e| match e {
            Error::Infeasible { residual, .. } => Error::PatchOrthogonality { vertex: a, residual },
            e => e,
        })?;
        let constraint_residual = relative_constraint_residual(&prob, &sol.x);
        let field = CoefficientField::new(space.clone(), space.expand(&sol.x))?;
        Ok(ThetaPatch { vertex: a, field, objective: sol.objective, constraint_residual })
    }

    /// Sum of the zero-extended patch fields as a global `RT_phat` field with
    /// zero normal trace on the Neumann boundary.
    pub fn accumulate_delta(&self, thetas: &[ThetaPatch]) -> Result<CoefficientField> {
        let neumann = self.mesh.faces_tagged(BoundaryTag::Neumann);
        let space = Arc::new(FeSpace::global(self.mesh, SpaceKind::RaviartThomas, p_hat(self.p), &neumann)?);
        let map = space.compact_map();
        let mut c = vec![0.0; space.n_dofs()];
        for th in thetas {
            for (i, v) in th.field.coeffs.iter().enumerate() {
                c[map[&th.field.space.mesh_index[i]]] += v;
            }
        }
        CoefficientField::new(space, c)
    }

    /// Shared data of the four element problems of tet `k`.
    pub fn delta_system(&self, delta: &CoefficientField, k: usize) -> Result<DeltaTetSystem> {
        let mesh = self.mesh;
        let q = self.p + 1;
        let g = mesh.geometry(k);
        let det = g.measure_scale();
        let wp: Vec<f64> = self.poly.weights.iter().map(|w| w * det).collect();
        let grads = barycentric_gradients(mesh, k);
        let (dv, dd) = delta.eval_tab(mesh, k, &self.polytab_theta);
        let slot = delta.space.slot_of(k).expect("delta is global");
        let dc = DVector::from_vec(delta.elem_coeffs(slot));
        let rt_val = piola_matrix(SpaceKind::RaviartThomas, &g, false);
        let m = self.refs.delta_mass.gram(&rt_val, &rt_val, det);
        let c_div = &self.refs.delta_div * g.det.signum();
        let mut c0 = [0.0; 4];
        let mut compat = [0.0; 4];
        let mut cscale = [0.0; 4];
        let mut u = DMatrix::zeros(3 * wp.len(), 4);
        for (qq, &w) in wp.iter().enumerate() {
            let lam = self.poly_lam[qq];
            let pv = scale(w, mat_t_vec(&rt_val, dv[qq]));
            for l in 0..4 {
                compat[l] += w * (dot(grads[l], dv[qq]) + lam[l] * dd[qq][0]);
                // delta is a sum of patch fields of size max |j|, so cancellation
                // leaves round-off of that size
                cscale[l] += w * (norm(grads[l]) * (norm(dv[qq]) + self.scale) + dd[qq][0].abs());
                c0[l] += w * lam[l] * lam[l] * dot(dv[qq], dv[qq]);
                for a in 0..3 {
                    u[(3 * qq + a, l)] = lam[l] * pv[a];
                }
            }
        }
        let tm = self.polytab_delta.val.tr_mul(&u);
        let mut interp = Vec::with_capacity(4);
        let mut t = Vec::with_capacity(4);
        for l in 0..4 {
            let iv = &*hat_product_dofs(p_hat(self.p), q, l)? * &dc;
            if self.p == 0 {
                let mi = &m * &iv;
                c0[l] = iv.dot(&mi);
                t.push(mi);
            } else {
                t.push(tm.column(l).into_owned());
            }
            interp.push(iv);
        }
        let defect = std::array::from_fn(|l| if cscale[l] > 0.0 { compat[l].abs() / cscale[l] } else { 0.0 });
        Ok(DeltaTetSystem { tet: k, m, c_div, interp, t, c0, defect })
    }

    /// Problem for local vertex `l`: the `RT_{p+1}` field closest to
    /// `psi_a delta` (its interpolate when `p = 0`) with zero divergence and
    /// the normal trace of `psi_a delta`.
    pub fn delta_local_problem(&self, sys: &DeltaTetSystem, l: usize) -> Result<ConstrainedLsProblem> {
        let k = sys.tet;
        if sys.defect[l] > 1e-10 {
            return Err(Error::Compatibility { element: k, vertex: self.mesh.tets[k][l], value: sys.defect[l] });
        }
        let n = sys.m.ncols();
        let lay = crate::spaces::DofLayout::new(SpaceKind::RaviartThomas, self.p + 1);
        let mut ct = Vec::new();
        let mut d = Vec::new();
        for f in 0..4 {
            for i in face_trace_dofs(SpaceKind::RaviartThomas, &lay, f) {
                ct.push((d.len(), i, 1.0));
                d.push(sys.interp[l][i]);
            }
        }
        for mm in 0..sys.c_div.nrows() {
            let row = d.len();
            d.push(0.0);
            for i in 0..n {
                ct.push((row, i, sys.c_div[(mm, i)]));
            }
        }
        let mut trips = Vec::new();
        let all: Vec<Option<usize>> = (0..n).map(Some).collect();
        dense_to_trips(&sys.m, &all, &mut trips);
        let c = CsrMatrix::from_triplets(d.len(), n, ct);
        let mut prob = ConstrainedLsProblem::new(SparseSymMatrix::from_triplets(n, trips)?, sys.t[l].as_slice().to_vec(), c, d);
        prob.c0 = Some(sys.c0[l]);
        Ok(prob)
    }

    /// Element problem for the contribution of vertex `a` on tet `k` and the
    /// trace compatibility defect.
    pub fn delta_element_problem(&self, delta: &CoefficientField, k: usize, a: usize) -> Result<(ConstrainedLsProblem, f64)> {
        let sys = self.delta_system(delta, k)?;
        let la = self.local_index(a, k);
        Ok((self.delta_local_problem(&sys, la)?, sys.defect[la]))
    }

    fn solve_delta_local(&self, sys: &DeltaTetSystem, l: usize) -> Result<(ElementField, LsSolution)> {
        let k = sys.tet;
        let prob = self.delta_local_problem(sys, l)?;
        self.dump(self.mesh.tets[k][l], &format!("delta{k}"), &prob)?;
        let sol = solve_constrained_ls(&prob)?;
        Ok((ElementField { kind: SpaceKind::RaviartThomas, degree: self.p + 1, tet: k, coeffs: sol.x.clone() }, sol))
    }

    pub fn solve_delta_element(&self, delta: &CoefficientField, k: usize, a: usize) -> Result<(ElementField, LsSolution)> {
        let sys = self.delta_system(delta, k)?;
        self.solve_delta_local(&sys, self.local_index(a, k))
    }

    /// All four contributions on tet `k`, ordered by local vertex.
    pub fn solve_delta_tet(&self, delta: &CoefficientField, k: usize) -> Result<Vec<ElementField>> {
        let sys = self.delta_system(delta, k)?;
        (0..4).map(|l| self.solve_delta_local(&sys, l).map(|r| r.0)).collect()
    }

    /// `j_h^a = psi_a j + theta^a - delta^a` at the data points of every patch tet.
    pub fn patch_current(&self, a: usize, theta: &ThetaPatch, delta_elem: &[Vec<ElementField>]) -> Vec<Vec<Vec3>> {
        let mesh = self.mesh;
        self.patches[a]
            .tets
            .iter()
            .map(|&k| {
                let la = self.local_index(a, k);
                let (th, _) = theta.field.eval_tab(mesh, k, &self.rt_theta);
                let (de, _) = delta_elem[k][la].eval_tab(&mesh.geometry(k), &self.rt_delta);
                (0..self.rule.len())
                    .map(|q| sub(add(scale(self.lam[q][la], self.sol.j_eff.values[k][q]), th[q]), de[q]))
                    .collect()
            })
            .collect()
    }

    /// Values of `j_h^a` at an arbitrary point of patch tet `k`.
    fn patch_current_at(&self, a: usize, k: usize, x: Vec3, theta: &ThetaPatch, delta_elem: &[Vec<ElementField>]) -> Result<Vec3> {
        let la = self.local_index(a, k);
        let lam = barycentric(self.mesh, k, x)[la];
        let (_, gs) = self.sol.multiplier.eval(self.mesh, k, x);
        let jt = sub(self.j.eval(x), gs);
        let (th, _) = theta.field.eval(self.mesh, k, x);
        let g = self.mesh.geometry(k);
        let (de, _) = delta_elem[k][la].eval_ref(&g, g.pullback_point(x))?;
        Ok(sub(add(scale(lam, jt), th), de))
    }

    /// Step 3 problem: the `ND_{p+1}` patch field closest to `psi_a curl A_h`
    /// whose curl matches `j_h^a` weakly against curls of the same space.
    pub fn flux_problem(
        &self,
        a: usize,
        theta: &ThetaPatch,
        delta_elem: &[Vec<ElementField>],
    ) -> Result<(Arc<FeSpace>, ConstrainedLsProblem)> {
        let mesh = self.mesh;
        let patch = &self.patches[a];
        let constrained = face_mask(mesh, &patch.constrained_faces());
        let space = Arc::new(FeSpace::on_tets(mesh, SpaceKind::Nedelec, self.p + 1, &patch.tets, &constrained)?);
        let n = space.n_free;
        let (mut mt, mut kt) = (Vec::new(), Vec::new());
        let mut t = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut c0 = 0.0;
        for (s, &k) in patch.tets.iter().enumerate() {
            let td = &self.tets[k];
            let la = self.local_index(a, k);
            let fr = space.elem_free(s);
            dense_to_trips(&td.fl_m, &fr, &mut mt);
            dense_to_trips(&td.fl_k, &fr, &mut kt);
            c0 += td.fl_c0[la];
            let th = DVector::from_vec(theta.field.elem_coeffs(s));
            let de = DVector::from_column_slice(&delta_elem[k][la].coeffs);
            let dl = td.fl_j.column(la) + &td.fl_x * th - &td.fl_y * de;
            for (i, gi) in fr.iter().enumerate() {
                if let Some(gi) = *gi {
                    t[gi] += td.fl_t[(i, la)];
                    d[gi] += dl[i];
                }
            }
        }
        let c = CsrMatrix::from_triplets(n, n, kt);
        let mut prob = ConstrainedLsProblem::new(SparseSymMatrix::from_triplets(n, mt)?, t, c, d);
        prob.c0 = Some(c0);
        Ok((space, prob))
    }

    /// Solve the flux problem of vertex `a`; `jh` is [`Self::patch_current`].
    pub fn solve_equilibration_patch(
        &self,
        a: usize,
        theta: &ThetaPatch,
        delta_elem: &[Vec<ElementField>],
        jh: &[Vec<Vec3>],
    ) -> Result<FluxPatch> {
        let (space, prob) = self.flux_problem(a, theta, delta_elem)?;
        self.dump(a, "flux", &prob)?;
        let sol = solve_constrained_ls(&prob).map_err(|e| match e {
            Error::Infeasible { residual, tolerance } => {
                log::error!("flux problem at vertex {a} infeasible");
                Error::Infeasible { residual, tolerance }
            }
            e => e,
        })?;
        let constraint_residual = relative_constraint_residual(&prob, &sol.x);
        let field = CoefficientField::new(space.clone(), space.expand(&sol.x))?;
        let patch = &self.patches[a];
        let mut r2 = 0.0;
        for (s, &k) in patch.tets.iter().enumerate() {
            let (_, curl) = field.eval_tab(self.mesh, k, &self.nd_flux);
            for (q, wq) in self.weights(k).iter().enumerate() {
                let r = sub(curl[q], jh[s][q]);
                r2 += wq * dot(r, r);
            }
        }
        Ok(FluxPatch {
            vertex: a,
            field,
            objective: sol.objective,
            constraint_residual,
            eta_osc_jh: patch.h_omega * r2.sqrt(),
        })
    }

    /// Global `ND_{p+1}` field with zero tangential trace on the Neumann boundary.
    pub fn assemble_flux(&self, patches: &[FluxPatch]) -> Result<CoefficientField> {
        let neumann = self.mesh.faces_tagged(BoundaryTag::Neumann);
        let space = Arc::new(FeSpace::global(self.mesh, SpaceKind::Nedelec, self.p + 1, &neumann)?);
        let map = space.compact_map();
        let mut c = vec![0.0; space.n_dofs()];
        for fp in patches {
            for (i, v) in fp.field.coeffs.iter().enumerate() {
                c[map[&fp.field.space.mesh_index[i]]] += v;
            }
        }
        CoefficientField::new(space, c)
    }

    /// Elementwise `h_K / pi |j - Pi_phat j|_K`.
    pub fn element_oscillation(&self) -> Result<Vec<f64>> {
        let mesh = self.mesh;
        let tets: Vec<usize> = (0..mesh.num_tets()).collect();
        let j = self.j;
        let proj = l2_project(mesh, &tets, p_hat(self.p), 3, self.rule.exactness, &|_, x| j.eval(x))?;
        Ok(tets
            .par_iter()
            .map(|&k| {
                let w = self.weights(k);
                let mut e2 = 0.0;
                for (q, wq) in w.iter().enumerate() {
                    let r = sub(self.sol.j_data.values[k][q], proj.eval_ref(k, self.rule.points[q]));
                    e2 += wq * dot(r, r);
                }
                mesh.h_tet[k] / std::f64::consts::PI * e2.sqrt()
            })
            .collect())
    }

    /// The three oscillation terms of vertex `a` given the elementwise data
    /// oscillation and the flux contribution.
    pub fn oscillation_terms(&self, a: usize, elem_osc: &[f64], flux: &FluxPatch) -> OscillationTerms {
        let patch = &self.patches[a];
        let rss = |ks: &[usize]| ks.iter().map(|&k| elem_osc[k] * elem_osc[k]).sum::<f64>().sqrt();
        OscillationTerms {
            eta_osc_j: rss(&patch.tets),
            eta_osc_j_tilde: rss(&patch.extended_tets),
            eta_osc_jh: flux.eta_osc_jh,
        }
    }

    fn check_delta(&self, delta: &CoefficientField, delta_elem: &[Vec<ElementField>], checks: &mut PostChecks) -> Result<()> {
        let mesh = self.mesh;
        let res: Vec<(f64, f64, f64)> = (0..mesh.num_tets())
            .into_par_iter()
            .map(|k| {
                let w = self.weights(k);
                let g = mesh.geometry(k);
                let (dv, dd) = delta.eval_tab(mesh, k, &self.rt_theta);
                let mut total = delta_elem[k][0].clone();
                for f in &delta_elem[k][1..] {
                    for (c, v) in total.coeffs.iter_mut().zip(&f.coeffs) {
                        *c += v;
                    }
                }
                let (sum, _) = total.eval_tab(&g, &self.rt_delta);
                let div = dd.iter().map(|d| d[0].abs()).fold(0.0, f64::max) * mesh.h_tet[k];
                let mut mom = [0.0; 3];
                for (q, wq) in w.iter().enumerate() {
                    for l in 0..3 {
                        mom[l] += wq * dv[q][l];
                    }
                }
                let vol = g.volume();
                let mom = mom.iter().map(|m| m.abs()).fold(0.0, f64::max) / vol;
                let split = sum.iter().zip(&dv).map(|(s, v)| norm(sub(*s, *v))).fold(0.0, f64::max);
                (div, mom, split)
            })
            .collect();
        for (a, b, c) in res {
            checks.delta_div = checks.delta_div.max(a / self.scale);
            checks.delta_moments = checks.delta_moments.max(b / self.scale);
            checks.delta_split = checks.delta_split.max(c / self.scale);
        }
        Ok(())
    }

    /// Divergence of `j_h^a` at the data points and its normal trace defects on
    /// the patch faces (jumps inside, values on constrained boundary faces).
    fn check_patch_current(&self, a: usize, theta: &ThetaPatch, delta_elem: &[Vec<ElementField>]) -> Result<(f64, f64)> {
        let mesh = self.mesh;
        let patch = &self.patches[a];
        let mut div_max: f64 = 0.0;
        for &k in &patch.tets {
            let la = self.local_index(a, k);
            let ga = barycentric_gradients(mesh, k)[la];
            let g = mesh.geometry(k);
            let (_, thd) = theta.field.eval_tab(mesh, k, &self.rt_theta);
            let (_, ded) = delta_elem[k][la].eval_tab(&g, &self.rt_delta);
            for q in 0..self.rule.len() {
                let x = g.map(self.rule.points[q]);
                let dj = self.j.divergence(x).unwrap_or(0.0);
                let v = dot(ga, self.sol.j_eff.values[k][q]) + self.lam[q][la] * dj + thd[q][0] - ded[q][0];
                div_max = div_max.max(v.abs() * mesh.h_tet[k]);
            }
        }
        let tri = gauss_rule_tri(2 * (self.p + 2) + 2)?;
        let constrained = patch.constrained_faces();
        let mut sides: HashMap<usize, Vec<(Vec3, Vec<f64>)>> = HashMap::new();
        for &k in &patch.tets {
            let pts = mesh.tet_points(k);
            for l in 0..4 {
                let f = mesh.tet_faces[k][l];
                let fl = LOCAL_FACES[l];
                let n = mesh.outward_normal(k, l);
                let mut vals = Vec::with_capacity(tri.len());
                for pt in &tri.points {
                    let x = add(pts[fl[0]], add(scale(pt[0], sub(pts[fl[1]], pts[fl[0]])), scale(pt[1], sub(pts[fl[2]], pts[fl[0]]))));
                    vals.push(dot(self.patch_current_at(a, k, x, theta, delta_elem)?, n));
                }
                sides.entry(f).or_default().push((n, vals));
            }
        }
        let mut trace_max: f64 = 0.0;
        for (f, s) in &sides {
            if s.len() == 2 {
                for (u, v) in s[0].1.iter().zip(&s[1].1) {
                    trace_max = trace_max.max((u + v).abs());
                }
            } else if constrained.contains(f) {
                trace_max = trace_max.max(s[0].1.iter().fold(0.0, |m, v| m.max(v.abs())));
            }
        }
        Ok((div_max / self.scale, trace_max / self.scale))
    }

    fn check_flux(&self, sigma: &CoefficientField, checks: &mut PostChecks) -> Result<()> {
        let mesh = self.mesh;
        let tri = gauss_rule_tri(2 * (self.p + 1) + 2)?;
        let jumps: Vec<(f64, f64)> = (0..mesh.faces.len())
            .into_par_iter()
            .map(|f| {
                let (k1, k2) = mesh.face_tets[f];
                if k2.is_none() && mesh.face_tag(f) != Some(BoundaryTag::Neumann) {
                    return (0.0, 0.0);
                }
                let l1 = mesh.tet_faces[k1].iter().position(|&g| g == f).unwrap();
                let n = mesh.outward_normal(k1, l1);
                let pts = mesh.tet_points(k1);
                let fl = LOCAL_FACES[l1];
                let (mut jmax, mut smax): (f64, f64) = (0.0, 0.0);
                for pt in &tri.points {
                    let x = add(pts[fl[0]], add(scale(pt[0], sub(pts[fl[1]], pts[fl[0]])), scale(pt[1], sub(pts[fl[2]], pts[fl[0]]))));
                    let s1 = sigma.eval(mesh, k1, x).0;
                    let s2 = k2.map_or([0.0; 3], |k2| sigma.eval(mesh, k2, x).0);
                    jmax = jmax.max(norm(cross(n, sub(s1, s2))));
                    smax = smax.max(norm(s1)).max(norm(s2));
                }
                (jmax, smax)
            })
            .collect();
        let smax = jumps.iter().map(|v| v.1).fold(0.0, f64::max);
        let jmax = jumps.iter().map(|v| v.0).fold(0.0, f64::max);
        checks.tangential_jump = if smax > 0.0 { jmax / smax } else { jmax };
        let (mut r2, mut j2) = (0.0, 0.0);
        for k in 0..mesh.num_tets() {
            let (_, curl) = sigma.eval_tab(mesh, k, &self.nd_flux);
            for (q, wq) in self.weights(k).iter().enumerate() {
                let jv = self.sol.j_data.values[k][q];
                let r = sub(jv, curl[q]);
                r2 += wq * dot(r, r);
                j2 += wq * dot(jv, jv);
            }
        }
        checks.equilibration_residual = if j2 > 0.0 { (r2 / j2).sqrt() } else { r2.sqrt() };
        Ok(())
    }

    /// Run all steps and the post-checks.
    pub fn run(&self) -> Result<EquilibrationResult> {
        let mesh = self.mesh;
        let nv = mesh.num_vertices();
        let mut checks = PostChecks { piecewise_rt: self.j.is_piecewise_rt(self.p), ..Default::default() };

        let clock = std::time::Instant::now();
        let theta: Vec<ThetaPatch> = (0..nv).into_par_iter().map(|a| self.solve_theta_patch(a)).collect::<Result<_>>()?;
        checks.theta_constraint = theta.iter().map(|t| t.constraint_residual).fold(0.0, f64::max);
        let delta = self.accumulate_delta(&theta)?;
        log::debug!("theta patches: {:.2?}", clock.elapsed());

        let delta_elem: Vec<Vec<ElementField>> = (0..mesh.num_tets())
            .into_par_iter()
            .map(|k| self.solve_delta_tet(&delta, k))
            .collect::<Result<_>>()?;
        log::debug!("delta elements: {:.2?}", clock.elapsed());
        self.check_delta(&delta, &delta_elem, &mut checks)?;
        log::debug!("delta checks: {:.2?}", clock.elapsed());

        let staged: Vec<(FluxPatch, Vec<Vec<Vec3>>, Option<(f64, f64)>)> = (0..nv)
            .into_par_iter()
            .map(|a| {
                let jh = self.patch_current(a, &theta[a], &delta_elem);
                let fp = self.solve_equilibration_patch(a, &theta[a], &delta_elem, &jh)?;
                let pc = if self.checked(a) { Some(self.check_patch_current(a, &theta[a], &delta_elem)?) } else { None };
                Ok((fp, jh, pc))
            })
            .collect::<Result<_>>()?;

        let mut jsum: Vec<Vec<Vec3>> = vec![vec![[0.0; 3]; self.rule.len()]; mesh.num_tets()];
        let mut contributions = Vec::with_capacity(nv);
        for (a, (fp, jh, pc)) in staged.into_iter().enumerate() {
            for (s, &k) in self.patches[a].tets.iter().enumerate() {
                for (acc, v) in jsum[k].iter_mut().zip(&jh[s]) {
                    *acc = add(*acc, *v);
                }
            }
            if let Some((dv, tr)) = pc {
                checks.checked_patches += 1;
                checks.jh_div = checks.jh_div.max(dv);
                checks.jh_trace = checks.jh_trace.max(tr);
            }
            checks.flux_constraint = checks.flux_constraint.max(fp.constraint_residual);
            contributions.push(fp);
        }
        for (k, row) in jsum.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                checks.decomposition = checks.decomposition.max(norm(sub(*v, self.sol.j_data.values[k][q])) / self.scale);
            }
        }

        log::debug!("flux patches: {:.2?}", clock.elapsed());
        let sigma = self.assemble_flux(&contributions)?;
        self.check_flux(&sigma, &mut checks)?;
        log::debug!("flux checks: {:.2?}", clock.elapsed());
        let elem_osc = self.element_oscillation()?;
        log::debug!("oscillation: {:.2?}", clock.elapsed());
        let osc = (0..nv).map(|a| self.oscillation_terms(a, &elem_osc, &contributions[a])).collect();
        for f in checks.failures() {
            log::warn!("post-check: {f}");
        }
        Ok(EquilibrationResult {
            degree: self.p,
            theta,
            delta,
            delta_elem,
            flux: EquilibratedFlux { sigma, contributions },
            osc,
            checks,
        })
    }
}

/// Equilibrate the residual of a discrete potential.
pub fn equilibrate(
    mesh: &TetMesh,
    sol: &MagneticPotentialSolution,
    j: &CurrentDensity,
    opts: EquilibrationOptions,
) -> Result<EquilibrationResult> {
    Equilibrator::new(mesh, sol, j, opts)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_cube_mesh;
    use crate::solver::{solve_magnetic_potential, QuadConfig};

    #[test]
    fn zero_current_gives_zero_fields() {
        let m = build_structured_cube_mesh(1).unwrap();
        let j = CurrentDensity::zero();
        let s = solve_magnetic_potential(&m, 1, &j, QuadConfig::default()).unwrap();
        let r = equilibrate(&m, &s, &j, EquilibrationOptions::default()).unwrap();
        assert!(r.flux.sigma.coeffs.iter().all(|c| *c == 0.0));
        assert!(r.delta.coeffs.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn constant_current_equilibrates() {
        let m = build_structured_cube_mesh(1).unwrap();
        let j = CurrentDensity::constant([0.0, 0.0, 1.0]);
        let s = solve_magnetic_potential(&m, 1, &j, QuadConfig::default()).unwrap();
        let opts = EquilibrationOptions { verify: true, ..Default::default() };
        let r = equilibrate(&m, &s, &j, opts).unwrap();
        let c = &r.checks;
        assert!(c.failures().is_empty(), "{:?}", c);
        assert!(c.equilibration_residual < 1e-10, "{c:?}");
    }
}
