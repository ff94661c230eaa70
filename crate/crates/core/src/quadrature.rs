//! Collapsed Gauss–Jacobi quadrature on the reference simplices.
//!
//! Tetrahedron rules are conical products of Gauss–Jacobi rules with
//! weights `(1-t)^2`, `(1-t)` and `1`, so a rule with `n` points per
//! direction integrates polynomials of total degree `2n - 1` exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Highest exactness degree served by [`gauss_rule_tet`].
pub const MAX_EXACTNESS: usize = 40;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    /// Dimension of the reference simplex (1, 2 or 3).
    pub dim: usize,
    /// Points in reference Cartesian coordinates; unused trailing coordinates are zero.
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Barycentric coordinates of point `i`.
    pub fn barycentric(&self, i: usize) -> Vec<f64> {
        let p = self.points[i];
        let s: f64 = p.iter().take(self.dim).sum();
        let mut out = vec![1.0 - s];
        out.extend_from_slice(&p[..self.dim]);
        out
    }

    pub fn integrate(&self, f: impl Fn(Vec3) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

/// Gauss–Jacobi nodes and weights on `[0, 1]` for the weight `(1 - t)^alpha`,
/// computed with the Golub–Welsch eigenvalue method.
pub fn gauss_jacobi01(n: usize, alpha: u32) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let a = alpha as f64;
    let b = 0.0f64;
    let mut jm = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let s = 2.0 * kf + a + b;
        let diag = if k == 0 { (b - a) / (a + b + 2.0) } else { (b * b - a * a) / (s * (s + 2.0)) };
        jm[(k, k)] = diag;
        if k + 1 < n {
            let m = kf + 1.0;
            let s1 = 2.0 * m + a + b;
            let num = 4.0 * m * (m + a) * (m + b) * (m + a + b);
            let den = s1 * s1 * (s1 + 1.0) * (s1 - 1.0);
            let off = (num / den).sqrt();
            jm[(k, k + 1)] = off;
            jm[(k + 1, k)] = off;
        }
    }
    // integral of (1-x)^a over [-1, 1]
    let mu0 = 2f64.powf(a + 1.0) / (a + 1.0);
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x = eig.eigenvalues[k];
            let v0 = eig.eigenvectors[(0, k)];
            (x, mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    // map [-1,1] -> [0,1]; (1-x) = 2(1-t); dx = 2 dt
    let factor = 1.0 / 2f64.powf(a + 1.0);
    let nodes = pairs.iter().map(|p| 0.5 * (p.0 + 1.0)).collect();
    let weights = pairs.iter().map(|p| p.1 * factor).collect();
    (nodes, weights)
}

fn points_for(exactness: usize) -> usize {
    exactness / 2 + 1
}

fn check_exactness(exactness: usize) -> Result<()> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::InvalidArgument(format!(
            "quadrature exactness {exactness} exceeds supported maximum {MAX_EXACTNESS}"
        )));
    }
    Ok(())
}

fn build_tet(exactness: usize) -> QuadratureRule {
    let n = points_for(exactness);
    let (t1, w1) = gauss_jacobi01(n, 2);
    let (t2, w2) = gauss_jacobi01(n, 1);
    let (t3, w3) = gauss_jacobi01(n, 0);
    let mut points = Vec::with_capacity(n * n * n);
    let mut weights = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = t1[i];
                let y = (1.0 - t1[i]) * t2[j];
                let z = (1.0 - t1[i]) * (1.0 - t2[j]) * t3[k];
                points.push([x, y, z]);
                weights.push(w1[i] * w2[j] * w3[k]);
            }
        }
    }
    QuadratureRule { dim: 3, points, weights, exactness }
}

fn build_tri(exactness: usize) -> QuadratureRule {
    let n = points_for(exactness);
    let (t1, w1) = gauss_jacobi01(n, 1);
    let (t2, w2) = gauss_jacobi01(n, 0);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            points.push([t1[i], (1.0 - t1[i]) * t2[j], 0.0]);
            weights.push(w1[i] * w2[j]);
        }
    }
    QuadratureRule { dim: 2, points, weights, exactness }
}

fn build_line(exactness: usize) -> QuadratureRule {
    let n = points_for(exactness);
    let (t, w) = gauss_jacobi01(n, 0);
    QuadratureRule { dim: 1, points: t.iter().map(|&x| [x, 0.0, 0.0]).collect(), weights: w, exactness }
}

type Cache = Mutex<HashMap<(usize, usize), Arc<QuadratureRule>>>;

fn cached(dim: usize, exactness: usize) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    check_exactness(exactness)?;
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    Ok(guard
        .entry((dim, exactness))
        .or_insert_with(|| {
            Arc::new(match dim {
                1 => build_line(exactness),
                2 => build_tri(exactness),
                _ => build_tet(exactness),
            })
        })
        .clone())
}

/// Rule on the reference tetrahedron exact up to total degree `exactness`.
pub fn gauss_rule_tet(exactness: usize) -> Result<Arc<QuadratureRule>> {
    cached(3, exactness)
}

/// Rule on the reference triangle `{(0,0), (1,0), (0,1)}`.
pub fn gauss_rule_tri(exactness: usize) -> Result<Arc<QuadratureRule>> {
    cached(2, exactness)
}

/// Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_rule_line(exactness: usize) -> Result<Arc<QuadratureRule>> {
    cached(1, exactness)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    // ∫_ref x^a y^b z^c = a! b! c! / (a+b+c+3)!
    fn tet_monomial(a: u32, b: u32, c: u32) -> f64 {
        factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
    }

    #[test]
    fn degree_zero_is_barycenter() {
        let r = gauss_rule_tet(0).unwrap();
        assert_eq!(r.len(), 1);
        for c in r.points[0] {
            assert!((c - 0.25).abs() < 1e-15);
        }
        assert!((r.weights[0] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn x_squared_integral() {
        let r = gauss_rule_tet(2).unwrap();
        let v = r.integrate(|p| p[0] * p[0]);
        assert!((v - 1.0 / 60.0).abs() < 1e-14);
    }

    #[test]
    fn monomials_up_to_exactness() {
        for k in [1usize, 4, 9, 14, 20] {
            let r = gauss_rule_tet(k).unwrap();
            for a in 0..=k as u32 {
                for b in 0..=(k as u32 - a) {
                    for c in 0..=(k as u32 - a - b) {
                        let v = r.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32));
                        let exact = tet_monomial(a, b, c);
                        assert!((v - exact).abs() <= 1e-13 * exact.max(1e-3), "k={k} {a}{b}{c}");
                    }
                }
            }
        }
    }

    #[test]
    fn triangle_and_line() {
        let r = gauss_rule_tri(6).unwrap();
        let w: f64 = r.weights.iter().sum();
        assert!((w - 0.5).abs() < 1e-15);
        // ∫ x^2 y^3 over the triangle = 2! 3! / 7!
        let v = r.integrate(|p| p[0].powi(2) * p[1].powi(3));
        assert!((v - 2.0 * 6.0 / 5040.0).abs() < 1e-15);
        let l = gauss_rule_line(5).unwrap();
        assert!((l.integrate(|p| p[0].powi(5)) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn unsupported_exactness() {
        assert!(gauss_rule_tet(99).is_err());
    }
}
