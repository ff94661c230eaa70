use curl_equilib::geometry::{cross, scale, sub, Vec3};
use curl_equilib::mesh::{barycentric, barycentric_gradients, BoundarySpec, TetMesh};
use curl_equilib::quadrature::gauss_rule_tet;
use curl_equilib::spaces::reference::SpaceKind;
use curl_equilib::spaces::{interpolate_element, l2_project, rt_interpolate};

fn tet(v: [Vec3; 4]) -> TetMesh {
    TetMesh::new(v.to_vec(), vec![[0, 1, 2, 3]], &BoundarySpec::default()).unwrap()
}

fn reference() -> TetMesh {
    tet([[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
}

fn skewed() -> TetMesh {
    tet([[0.1, -0.2, 0.0], [1.3, 0.1, 0.2], [0.2, 0.9, -0.1], [0.3, 0.4, 1.1]])
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (0..3).all(|c| (a[c] - b[c]).abs() <= tol)
}

#[test]
fn whitney_forms_have_constant_curl() {
    let m = skewed();
    let g = barycentric_gradients(&m, 0);
    for (i, j) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
        let w = |x: Vec3| {
            let l = barycentric(&m, 0, x);
            sub(scale(l[i], g[j]), scale(l[j], g[i]))
        };
        let f = interpolate_element(&m, SpaceKind::Nedelec, 0, 0, 2, &w).unwrap();
        let geo = m.geometry(0);
        for xh in [[0.1, 0.2, 0.3], [0.25; 3], [0.6, 0.1, 0.05]] {
            let (v, c) = f.eval_ref(&geo, xh).unwrap();
            assert!(close(v, w(geo.map(xh)), 1e-12));
            assert!(close(c, scale(2.0, cross(g[i], g[j])), 1e-11), "{c:?}");
        }
    }
}

#[test]
fn rt_commutes_with_divergence_of_position() {
    let m = skewed();
    let g = m.geometry(0);
    for q in 0..4 {
        let f = rt_interpolate(&m, q, 0, &|x| x).unwrap();
        for xh in [[0.1, 0.2, 0.3], [0.7, 0.1, 0.1]] {
            let (v, d) = f.eval_ref(&g, xh).unwrap();
            assert!((d[0] - 3.0).abs() < 1e-11);
            assert!(close(v, g.map(xh), 1e-11));
        }
    }
}

#[test]
fn l2_projection_examples() {
    let r = reference();
    let mean = l2_project(&r, &[0], 0, 1, 2, &|_, x| [x[0], 0.0, 0.0]).unwrap();
    assert!((mean.eval_ref(0, [0.3, 0.3, 0.3])[0] - 0.25).abs() < 1e-14);

    let m = skewed();
    let g = m.geometry(0);
    let cubic = |x: Vec3| [x[0] * x[1] * x[2] - x[0] * x[0], 2.0 * x[2], 1.0 - x[1] * x[1] * x[1]];
    let p = l2_project(&m, &[0], 3, 3, 6, &|_, x| cubic(x)).unwrap();
    for xh in [[0.1, 0.2, 0.3], [0.05, 0.8, 0.1]] {
        assert!(close(p.eval_ref(0, xh), cubic(g.map(xh)), 1e-12));
    }

    // sin(x_1) - Pi_2 sin(x_1) is orthogonal to P_2
    let q = 2;
    let p = l2_project(&m, &[0], q, 1, 14, &|_, x| [x[0].sin(), 0.0, 0.0]).unwrap();
    let rule = gauss_rule_tet(14).unwrap();
    let det = g.measure_scale();
    let monos = |x: Vec3| [1.0, x[0], x[1], x[2], x[0] * x[0], x[1] * x[1], x[2] * x[2], x[0] * x[1], x[1] * x[2], x[0] * x[2]];
    let mut worst = 0.0f64;
    for k in 0..10 {
        let mut r = 0.0;
        for (xh, w) in rule.points.iter().zip(&rule.weights) {
            let x = g.map(*xh);
            r += w * det * (x[0].sin() - p.eval_ref(0, *xh)[0]) * monos(x)[k];
        }
        worst = worst.max(r.abs());
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn interpolation_reproduces_degree_q_fields() {
    let m = skewed();
    let g = m.geometry(0);
    let f = |x: Vec3| [x[1] * x[1] - x[2], x[0] * x[2], 1.0 + x[0] * x[1]];
    for kind in [SpaceKind::Nedelec, SpaceKind::RaviartThomas] {
        for q in 2..=4 {
            let i = interpolate_element(&m, kind, q, 0, 4, &f).unwrap();
            for xh in [[0.2, 0.2, 0.2], [0.1, 0.6, 0.2]] {
                let (v, _) = i.eval_ref(&g, xh).unwrap();
                assert!(close(v, f(g.map(xh)), 1e-10), "{kind:?} q={q}");
            }
        }
    }
}
