//! Small fixed-size vector helpers and the affine reference map of a tetrahedron.

pub type Vec3 = [f64; 3];

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(s: f64, a: Vec3) -> Vec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Row-major 3x3 matrix.
pub type Mat3 = [[f64; 3]; 3];

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

#[inline]
pub fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inverse3(m: &Mat3) -> Mat3 {
    let d = det3(m);
    let inv_d = 1.0 / d;
    [
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_d,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_d,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_d,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_d,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_d,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_d,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_d,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_d,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_d,
        ],
    ]
}

/// Affine map `x = x0 + J x̂` from the reference tetrahedron
/// `{(0,0,0), e1, e2, e3}` onto a physical tetrahedron, with the Piola
/// transforms used by the H(curl) and H(div) element families.
///
/// The determinant is signed; the contravariant transform divides by the
/// signed value so that face fluxes are measured against the normal induced
/// by the local vertex ordering.
#[derive(Clone, Debug)]
pub struct TetGeometry {
    pub origin: Vec3,
    /// Columns are `x_i - x_0`, stored row-major.
    pub jac: Mat3,
    pub jac_inv: Mat3,
    pub det: f64,
}

impl TetGeometry {
    pub fn new(v: &[Vec3; 4]) -> Self {
        let e1 = sub(v[1], v[0]);
        let e2 = sub(v[2], v[0]);
        let e3 = sub(v[3], v[0]);
        let jac = [[e1[0], e2[0], e3[0]], [e1[1], e2[1], e3[1]], [e1[2], e2[2], e3[2]]];
        let det = det3(&jac);
        let jac_inv = inverse3(&jac);
        TetGeometry { origin: v[0], jac, jac_inv, det }
    }

    pub fn volume(&self) -> f64 {
        self.det.abs() / 6.0
    }

    pub fn map(&self, xh: Vec3) -> Vec3 {
        add(self.origin, mat_vec(&self.jac, xh))
    }

    pub fn pullback_point(&self, x: Vec3) -> Vec3 {
        mat_vec(&self.jac_inv, sub(x, self.origin))
    }

    /// Physical gradient of a scalar from its reference gradient: `J^{-T} ĝ`.
    pub fn covariant(&self, gh: Vec3) -> Vec3 {
        mat_t_vec(&self.jac_inv, gh)
    }

    /// `J v̂ / det J`.
    pub fn contravariant(&self, vh: Vec3) -> Vec3 {
        scale(1.0 / self.det, mat_vec(&self.jac, vh))
    }

    /// Inverse of the contravariant transform: `det J · J^{-1} v`.
    pub fn contravariant_pullback(&self, v: Vec3) -> Vec3 {
        scale(self.det, mat_vec(&self.jac_inv, v))
    }

    /// Inverse of the covariant transform: `J^T v`.
    pub fn covariant_pullback(&self, v: Vec3) -> Vec3 {
        mat_t_vec(&self.jac, v)
    }

    /// Quadrature weight scaling for volume integrals.
    pub fn measure_scale(&self) -> f64 {
        self.det.abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let g = TetGeometry::new(&[[0.1, 0.2, 0.0], [1.0, 0.3, 0.1], [0.2, 1.1, 0.0], [0.0, 0.4, 0.9]]);
        let x = [0.3, -0.2, 0.7];
        let back = g.map(g.pullback_point(x));
        assert!(dist(back, x) < 1e-14);
        let v = [0.5, 1.5, -2.0];
        let w = g.contravariant_pullback(g.contravariant(v));
        assert!(dist(v, w) < 1e-13);
    }
}
