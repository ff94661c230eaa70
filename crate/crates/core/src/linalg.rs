//! Sparse factorization, equality-constrained least squares and a dense
//! null-space oracle.

use std::fmt::Write as _;
use std::path::Path;

use faer::prelude::*;
use faer::dyn_stack::{MemBuffer, MemStack};
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, IntranodeLbltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, Par, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<(usize, usize, f64)>) -> Self {
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<f64> = Vec::with_capacity(trips.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in trips {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), t)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.values[k] * x[self.col_idx[k]]).sum())
            .collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (r, c, v) in self.triplets() {
            out[c] += v * y[r];
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| (self.row_ptr[r]..self.row_ptr[r + 1]).map(|k| self.values[k].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let d = self.to_dense_if_small();
        match d {
            Some(d) => (0..self.nrows).all(|i| (0..i).all(|j| (d[(i, j)] - d[(j, i)]).abs() <= tol * (1.0 + d[(i, j)].abs()))),
            None => {
                let mut t: Vec<_> = self.triplets().map(|(r, c, v)| (c, r, v)).collect();
                t.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
                let s: Vec<_> = self.triplets().collect();
                s.len() == t.len()
                    && s.iter().zip(&t).all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= tol * (1.0 + a.2.abs()))
            }
        }
    }

    fn to_dense_if_small(&self) -> Option<DMatrix<f64>> {
        (self.nrows <= 300).then(|| self.to_dense())
    }
}

/// Symmetric sparse matrix; both triangles are stored.
#[derive(Clone, Debug)]
pub struct SparseSymMatrix {
    pub csr: CsrMatrix,
}

impl SparseSymMatrix {
    pub fn from_triplets(n: usize, trips: Vec<(usize, usize, f64)>) -> Result<Self> {
        let csr = CsrMatrix::from_triplets(n, n, trips);
        if csr.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(SparseSymMatrix { csr })
    }

    pub fn dim(&self) -> usize {
        self.csr.nrows
    }
}

const DENSE_LIMIT: usize = 400;

enum Factor {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Sparse(faer::sparse::linalg::solvers::Lu<usize, f64>),
    Symmetric(SymmetricFactor),
}

/// Sparse `L B L^T` factorization: AMD ordering with Bunch–Kaufman pivoting
/// inside supernodes.
struct SymmetricFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    subdiag: Vec<f64>,
    fwd: Vec<usize>,
    inv: Vec<usize>,
}

impl SymmetricFactor {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        let trips: Vec<Triplet<usize, usize, f64>> =
            a.triplets().filter(|&(r, c, _)| r >= c).map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let symbolic = factorize_symbolic_cholesky(m.symbolic(), Side::Lower, SymmetricOrdering::Amd, Default::default())
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let mut values = vec![0.0; symbolic.len_val()];
        let mut subdiag = vec![0.0; n];
        let mut fwd = vec![0usize; n];
        let mut inv = vec![0usize; n];
        let mut mem = MemBuffer::try_new(symbolic.factorize_numeric_intranode_lblt_scratch::<f64>(Par::Seq, Default::default()))
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        symbolic.factorize_numeric_intranode_lblt(
            &mut values,
            &mut subdiag,
            &mut fwd,
            &mut inv,
            m.as_ref(),
            Side::Lower,
            Par::Seq,
            MemStack::new(&mut mem),
            Default::default(),
        );
        Ok(SymmetricFactor { symbolic, values, subdiag, fwd, inv })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let perm = PermRef::new_checked(&self.fwd, &self.inv, n);
        let f = IntranodeLbltRef::new(&self.symbolic, &self.values, &self.subdiag, perm);
        let mut x = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        f.solve_in_place_with_conj(Conj::No, x.as_mut(), Par::Seq, MemStack::new(&mut mem));
        (0..n).map(|i| x[(i, 0)]).collect()
    }
}

/// LU factorization of a square sparse matrix, dense below a size threshold.
pub struct Factorization {
    a: CsrMatrix,
    factor: Factor,
}

impl Factorization {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows;
        if n != a.ncols {
            return Err(Error::InvalidArgument("factorization needs a square matrix".into()));
        }
        let factor = if n <= DENSE_LIMIT {
            let lu = a.to_dense().lu();
            let u = lu.u();
            let dmax = (0..n).map(|i| u[(i, i)].abs()).fold(0.0, f64::max);
            if (0..n).any(|i| !(u[(i, i)].abs() > 1e-17 * dmax)) {
                return Err(Error::Factorization("singular pivot".into()));
            }
            Factor::Dense(lu)
        } else {
            let trips: Vec<Triplet<usize, usize, f64>> = a.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
            let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
                .map_err(|e| Error::Factorization(format!("{e:?}")))?;
            let lu = m.sp_lu().map_err(|e| Error::Factorization(format!("{e:?}")))?;
            Factor::Sparse(lu)
        };
        Ok(Factorization { a: a.clone(), factor })
    }

    /// Factorization of a symmetric (possibly indefinite) matrix; only the
    /// lower triangle is read. Small systems use dense LU.
    pub fn symmetric(a: &CsrMatrix) -> Result<Self> {
        if a.nrows <= DENSE_LIMIT {
            return Self::new(a);
        }
        Ok(Factorization { a: a.clone(), factor: Factor::Symmetric(SymmetricFactor::new(a)?) })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.factor {
            Factor::Dense(lu) => lu.solve(&DVector::from_column_slice(b)).map(|x| x.as_slice().to_vec()).unwrap_or_else(|| vec![f64::NAN; b.len()]),
            Factor::Sparse(lu) => {
                let rhs = faer::col::Col::<f64>::from_fn(b.len(), |i| b[i]);
                let x = lu.solve(&rhs);
                (0..b.len()).map(|i| x[i]).collect()
            }
            Factor::Symmetric(f) => f.solve(b),
        }
    }

    /// Solve with up to `refine` steps of iterative refinement against `target`
    /// (defaults to the factored matrix).
    pub fn solve_refined(&self, b: &[f64], target: Option<&dyn Fn(&[f64]) -> Vec<f64>>, refine: usize) -> Result<Vec<f64>> {
        let mut x = self.raw_solve(b);
        let apply = |x: &[f64]| match target {
            Some(f) => f(x),
            None => self.a.mul_vec(x),
        };
        let bn = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for _ in 0..refine {
            let ax = apply(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let rn = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if rn <= 1e-15 * bn {
                break;
            }
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("non-finite solution".into()));
        }
        Ok(x)
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_refined(b, None, 1)
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite matrix
/// (fill-reducing ordering chosen by faer).
pub struct Cholesky {
    llt: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl Cholesky {
    pub fn new(m: &SparseSymMatrix) -> Result<Self> {
        let n = m.dim();
        let trips: Vec<Triplet<usize, usize, f64>> =
            m.csr.triplets().filter(|&(r, c, _)| r >= c).map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::Factorization(format!("{e:?}")))?;
        let llt = a.sp_cholesky(faer::Side::Lower).map_err(|e| Error::Factorization(format!("{e:?}")))?;
        Ok(Cholesky { llt })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = faer::col::Col::<f64>::from_fn(b.len(), |i| b[i]);
        let x = self.llt.solve(&rhs);
        (0..b.len()).map(|i| x[i]).collect()
    }
}

/// Factor `m` and solve for every right-hand side, with one refinement step.
pub fn factor_solve(m: &SparseSymMatrix, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let f = Factorization::new(&m.csr)?;
    let mut out = Vec::with_capacity(rhs.len());
    for b in rhs {
        let x = f.solve(b)?;
        let r = m.csr.mul_vec(&x);
        let rn: f64 = r.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rn > 1e-6 * bn.max(f64::MIN_POSITIVE) {
            return Err(Error::Factorization(format!("residual {rn:.3e} after refinement")));
        }
        if rn > 1e-10 * bn {
            log::warn!("factor_solve residual {rn:.3e} relative to {bn:.3e}");
        }
        out.push(x);
    }
    Ok(out)
}

/// Minimize `v^T M v - 2 v^T t` subject to `C v = d`. Redundant but
/// consistent constraint rows are allowed.
#[derive(Clone, Debug)]
pub struct ConstrainedLsProblem {
    pub m: SparseSymMatrix,
    pub t: Vec<f64>,
    pub c: CsrMatrix,
    pub d: Vec<f64>,
    pub tol: f64,
    /// Optional constant `|tau|^2` so that the objective equals `|v - tau|_M^2`.
    pub c0: Option<f64>,
}

impl ConstrainedLsProblem {
    pub fn new(m: SparseSymMatrix, t: Vec<f64>, c: CsrMatrix, d: Vec<f64>) -> Self {
        ConstrainedLsProblem { m, t, c, d, tol: 1e-8, c0: None }
    }

    pub fn unconstrained(m: SparseSymMatrix, t: Vec<f64>) -> Self {
        let n = m.dim();
        Self::new(m, t, CsrMatrix::from_triplets(0, n, vec![]), vec![])
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mx = self.m.csr.mul_vec(x);
        let q: f64 = x.iter().zip(&mx).map(|(a, b)| a * b).sum();
        let l: f64 = x.iter().zip(&self.t).map(|(a, b)| a * b).sum();
        q - 2.0 * l + self.c0.unwrap_or(0.0)
    }

    pub fn constraint_residual(&self, x: &[f64]) -> f64 {
        let cx = self.c.mul_vec(x);
        cx.iter().zip(&self.d).fold(0.0, |a, (u, v)| a.max((u - v).abs()))
    }

    fn feasibility_tolerance(&self, x: &[f64]) -> f64 {
        let dn = self.d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        // |t| / |M| is the size of the unconstrained minimizer; it keeps the
        // tolerance meaningful when the solution itself vanishes
        let tn = self.t.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let xn = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(tn / self.m.csr.norm_inf().max(f64::MIN_POSITIVE));
        self.tol * (dn + self.c.norm_inf() * xn).max(f64::MIN_POSITIVE)
    }

    fn check_feasible(&self, x: &[f64]) -> Result<f64> {
        let r = self.constraint_residual(x);
        let tol = self.feasibility_tolerance(x);
        if !(r <= tol) {
            return Err(Error::Infeasible { residual: r, tolerance: tol });
        }
        Ok(r)
    }
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub constraint_residual: f64,
}

/// Saddle-point solve of a [`ConstrainedLsProblem`] with a small multiplier
/// regularization and refinement against the unregularized system.
pub fn solve_constrained_ls(p: &ConstrainedLsProblem) -> Result<LsSolution> {
    let n = p.dim();
    let mc = p.c.nrows;
    if mc == 0 {
        let x = factor_solve(&p.m, std::slice::from_ref(&p.t))?.pop().unwrap();
        let objective = p.objective(&x);
        return Ok(LsSolution { x, objective, constraint_residual: 0.0 });
    }
    let mnorm = p.m.csr.max_abs().max(f64::MIN_POSITIVE);
    let cnorm = p.c.max_abs();
    let s = if cnorm > 0.0 { mnorm / cnorm } else { 1.0 };
    let eps = 1e-12 * mnorm;
    let mut trips: Vec<(usize, usize, f64)> = p.m.csr.triplets().collect();
    for (r, c, v) in p.c.triplets() {
        trips.push((n + r, c, s * v));
        trips.push((c, n + r, s * v));
    }
    for i in 0..mc {
        trips.push((n + i, n + i, -eps));
    }
    let k = CsrMatrix::from_triplets(n + mc, n + mc, trips);
    let mut rhs = p.t.clone();
    rhs.extend(p.d.iter().map(|v| s * v));
    let f = Factorization::symmetric(&k)?;
    let exact = |z: &[f64]| -> Vec<f64> {
        let (x, l) = z.split_at(n);
        let mut top = p.m.csr.mul_vec(x);
        let ctl = p.c.transpose_mul_vec(l);
        for (a, b) in top.iter_mut().zip(&ctl) {
            *a += s * b;
        }
        top.extend(p.c.mul_vec(x).into_iter().map(|v| s * v));
        top
    };
    let z = f.solve_refined(&rhs, Some(&exact), 3)?;
    let x = z[..n].to_vec();
    let constraint_residual = p.check_feasible(&x)?;
    let objective = p.objective(&x);
    Ok(LsSolution { x, objective, constraint_residual })
}

/// Dense oracle: rank-revealing SVD of `C`, null-space parametrization and a
/// dense SPD solve.
pub fn dense_nullspace_qp(p: &ConstrainedLsProblem) -> Result<LsSolution> {
    let n = p.dim();
    if n > 2000 {
        return Err(Error::InvalidArgument(format!("dense oracle limited to 2000 unknowns, got {n}")));
    }
    let m = p.m.csr.to_dense();
    let t = DVector::from_column_slice(&p.t);
    let mc = p.c.nrows;
    let rows = mc.max(n);
    let mut c = DMatrix::<f64>::zeros(rows, n);
    let mut dv = DVector::<f64>::zeros(rows);
    for (r, col, v) in p.c.triplets() {
        c[(r, col)] += v;
    }
    for (i, v) in p.d.iter().enumerate() {
        dv[i] = *v;
    }
    let svd = c.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let smax = svd.singular_values.iter().fold(0.0f64, |a, v| a.max(*v));
    let rank_tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let mut vp = DVector::<f64>::zeros(n);
    let mut null_cols = Vec::new();
    for k in 0..n {
        let sk = svd.singular_values[k];
        let vk = vt.row(k).transpose();
        if smax > 0.0 && sk > rank_tol {
            let coef = u.column(k).dot(&dv) / sk;
            vp += vk * coef;
        } else {
            null_cols.push(vk);
        }
    }
    p.check_feasible(vp.as_slice())?;
    let x = if null_cols.is_empty() {
        vp
    } else {
        let nmat = DMatrix::from_columns(&null_cols);
        let a = nmat.transpose() * &m * &nmat;
        let b = nmat.transpose() * (&t - &m * &vp);
        let y = a
            .cholesky()
            .ok_or_else(|| Error::Factorization("reduced mass matrix not SPD".into()))?
            .solve(&b);
        vp + nmat * y
    };
    let x = x.as_slice().to_vec();
    let constraint_residual = p.check_feasible(&x)?;
    let objective = p.objective(&x);
    Ok(LsSolution { x, objective, constraint_residual })
}

/// Write a problem as matrix-market-style coordinate listings.
pub fn dump_problem(p: &ConstrainedLsProblem, path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "%% constrained least squares: minimize v'Mv - 2v't subject to Cv = d");
    let _ = writeln!(s, "M {} {} {}", p.m.dim(), p.m.dim(), p.m.csr.nnz());
    for (r, c, v) in p.m.csr.triplets() {
        let _ = writeln!(s, "{} {} {:.17e}", r + 1, c + 1, v);
    }
    let _ = writeln!(s, "t {}", p.t.len());
    for v in &p.t {
        let _ = writeln!(s, "{v:.17e}");
    }
    let _ = writeln!(s, "C {} {} {}", p.c.nrows, p.c.ncols, p.c.nnz());
    for (r, c, v) in p.c.triplets() {
        let _ = writeln!(s, "{} {} {:.17e}", r + 1, c + 1, v);
    }
    let _ = writeln!(s, "d {}", p.d.len());
    for v in &p.d {
        let _ = writeln!(s, "{v:.17e}");
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: usize, t: Vec<(usize, usize, f64)>) -> SparseSymMatrix {
        SparseSymMatrix::from_triplets(n, t).unwrap()
    }

    #[test]
    fn identity_and_two_by_two() {
        let i3 = sym(3, (0..3).map(|i| (i, i, 1.0)).collect());
        let x = factor_solve(&i3, &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(x[0], vec![1.0, 2.0, 3.0]);
        let a = sym(2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)]);
        let x = factor_solve(&a, &[vec![1.0, 1.0]]).unwrap();
        assert!((x[0][0] - 1.0 / 3.0).abs() < 1e-15 && (x[0][1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hyperplane_projection_and_duplicate_rows() {
        let m = sym(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let c = CsrMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]);
        let p = ConstrainedLsProblem::new(m.clone(), vec![0.0, 0.0], c, vec![2.0]);
        let s = solve_constrained_ls(&p).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        let c2 = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let p2 = ConstrainedLsProblem::new(m, vec![0.0, 0.0], c2, vec![2.0, 2.0]);
        let s2 = solve_constrained_ls(&p2).unwrap();
        assert!((s2.x[0] - s.x[0]).abs() < 1e-12 && (s2.x[1] - s.x[1]).abs() < 1e-12);
        let o = dense_nullspace_qp(&p2).unwrap();
        assert!((o.x[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_constraints_are_reported() {
        let m = sym(2, vec![(0, 0, 1.0), (1, 1, 1.0)]);
        let c = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let p = ConstrainedLsProblem::new(m, vec![0.0, 0.0], c, vec![2.0, 3.0]);
        assert!(matches!(solve_constrained_ls(&p), Err(Error::Infeasible { .. })));
        assert!(matches!(dense_nullspace_qp(&p), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn fully_determined_and_zero_constraints() {
        let m = sym(3, vec![(0, 0, 2.0), (1, 1, 3.0), (2, 2, 1.0), (0, 1, 0.5), (1, 0, 0.5)]);
        let c = CsrMatrix::identity(3);
        let p = ConstrainedLsProblem::new(m.clone(), vec![5.0, -1.0, 2.0], c, vec![0.1, 0.2, 0.3]);
        let o = dense_nullspace_qp(&p).unwrap();
        let s = solve_constrained_ls(&p).unwrap();
        for i in 0..3 {
            assert!((o.x[i] - [0.1, 0.2, 0.3][i]).abs() < 1e-12);
            assert!((s.x[i] - o.x[i]).abs() < 1e-10);
        }
        let z = CsrMatrix::from_triplets(2, 3, vec![]);
        let p = ConstrainedLsProblem::new(m.clone(), vec![1.0, 1.0, 1.0], z, vec![0.0, 0.0]);
        let o = dense_nullspace_qp(&p).unwrap();
        let u = solve_constrained_ls(&ConstrainedLsProblem::unconstrained(m, vec![1.0, 1.0, 1.0])).unwrap();
        for i in 0..3 {
            assert!((o.x[i] - u.x[i]).abs() < 1e-12);
        }
    }
}
