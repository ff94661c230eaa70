use curl_equilib::estimator::doerfler_mark;
use curl_equilib::experiments::{observed_rates, ResultRow};
use curl_equilib::geometry::{det3, Vec3};
use curl_equilib::linalg::{dense_nullspace_qp, solve_constrained_ls, ConstrainedLsProblem, CsrMatrix, SparseSymMatrix};
use curl_equilib::mesh::{build_structured_cube_mesh, format_mesh, hat_eval, parse_mesh, BoundarySpec, TetMesh};
use curl_equilib::quadrature::gauss_rule_tet;
use curl_equilib::spaces::interpolate_element;
use curl_equilib::spaces::reference::SpaceKind;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn row(n: usize, h: f64, err: f64) -> ResultRow {
    ResultRow {
        case: "x".into(),
        p: 1,
        n,
        h,
        dofs: 0,
        err,
        eta: err,
        eta_osc: 0.0,
        eff: 1.0,
        equil_res: 0.0,
        seconds: 0.0,
    }
}

fn point() -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-1.0..1.0f64)
}

/// Tets with volume bounded away from zero.
fn tet() -> impl Strategy<Value = [Vec3; 4]> {
    prop::array::uniform4(point()).prop_filter("degenerate", |v| {
        let m = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0], v[3][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1], v[3][1] - v[0][1]],
            [v[1][2] - v[0][2], v[2][2] - v[0][2], v[3][2] - v[0][2]],
        ];
        det3(&m).abs() > 0.05
    })
}

fn single(v: [Vec3; 4]) -> TetMesh {
    TetMesh::new(v.to_vec(), vec![[0, 1, 2, 3]], &BoundarySpec::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quadrature_integrates_monomials(e in 0usize..=12, a in 0usize..=12, b in 0usize..=12, c in 0usize..=12) {
        prop_assume!(a + b + c <= e);
        let rule = gauss_rule_tet(e).unwrap();
        let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
        let v = rule.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32));
        prop_assert!((v - exact).abs() <= 1e-13 * exact.max(1e-3), "{v} vs {exact}");
    }

    #[test]
    fn rates_recover_power_laws(r in 0.5..5.0f64, c in 0.1..10.0f64, levels in 2usize..5) {
        let rows: Vec<ResultRow> = (0..levels).map(|i| {
            let h = 0.5f64.powi(i as i32);
            row(1 << i, h, c * h.powf(r))
        }).collect();
        for got in observed_rates(&rows) {
            prop_assert!((got - r).abs() < 1e-10);
        }
        // non-halving sequence
        let rows: Vec<ResultRow> = [1.0, 0.6, 0.25].iter().map(|&h| row(1, h, c * h.powf(r))).collect();
        for got in observed_rates(&rows) {
            prop_assert!((got - r).abs() < 1e-10);
        }
    }

    #[test]
    fn marking_is_minimal(eta in prop::collection::vec(0.0..10.0f64, 1..40), theta in 0.0..=1.0f64) {
        let m = doerfler_mark(&eta, theta);
        let total: f64 = eta.iter().map(|v| v * v).sum();
        let sum: f64 = m.iter().map(|&k| eta[k] * eta[k]).sum();
        prop_assert!(sum >= theta * theta * total - 1e-12 * total);
        if let Some((_, head)) = m.split_last() {
            let less: f64 = head.iter().map(|&k| eta[k] * eta[k]).sum();
            prop_assert!(less < theta * theta * total);
        }
        // marked indicators dominate unmarked ones
        let min_marked = m.iter().map(|&k| eta[k]).fold(f64::INFINITY, f64::min);
        for k in 0..eta.len() {
            if !m.contains(&k) {
                prop_assert!(eta[k] <= min_marked);
            }
        }
    }

    #[test]
    fn constrained_ls_matches_dense_oracle(
        n in 3usize..12,
        seed in prop::collection::vec(-1.0..1.0f64, 400),
        mc in 0usize..4,
        dup in any::<bool>(),
    ) {
        let mut it = seed.iter().copied().cycle();
        let g = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
        let m = g.transpose() * &g + DMatrix::identity(n, n);
        let mut trips = Vec::new();
        for i in 0..n {
            for j in 0..n {
                trips.push((i, j, m[(i, j)]));
            }
        }
        let t: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
        let x0: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
        let mc = mc.min(n - 1);
        let mut rows: Vec<Vec<f64>> = (0..mc).map(|_| (0..n).map(|_| it.next().unwrap()).collect()).collect();
        if mc > 0 {
            // independent rows; redundancy comes only from the exact duplicate below
            let sv = DMatrix::from_fn(mc, n, |i, j| rows[i][j]).singular_values();
            prop_assume!(sv.min() > 1e-3 * sv.max());
        }
        if dup && mc > 0 {
            let r: Vec<f64> = rows[0].iter().map(|v| 2.0 * v).collect();
            rows.push(r);
        }
        let d: Vec<f64> = rows.iter().map(|r| r.iter().zip(&x0).map(|(a, b)| a * b).sum()).collect();
        let c = CsrMatrix::from_triplets(
            rows.len(),
            n,
            rows.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (i, j, *v))).collect(),
        );
        let p = ConstrainedLsProblem::new(SparseSymMatrix::from_triplets(n, trips).unwrap(), t, c, d);
        let a = solve_constrained_ls(&p).unwrap();
        let b = dense_nullspace_qp(&p).unwrap();
        let xn = b.x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() <= 1e-8 * xn);
        }
        prop_assert!((a.objective - b.objective).abs() <= 1e-8 * (1.0 + b.objective.abs()));
        prop_assert!(a.constraint_residual <= 1e-10 * xn);
    }

    #[test]
    fn hats_form_a_partition_of_unity(v in tet(), b in prop::array::uniform4(0.01..1.0f64)) {
        let m = single(v);
        let s: f64 = b.iter().sum();
        let x: Vec3 = std::array::from_fn(|c| (0..4).map(|l| b[l] / s * m.vertices[m.tets[0][l]][c]).sum());
        let (mut sum, mut grad) = (0.0, [0.0; 3]);
        for a in 0..4 {
            let (h, g) = hat_eval(&m, a, 0, x).unwrap();
            prop_assert!(h >= -1e-12);
            sum += h;
            (0..3).for_each(|c| grad[c] += g[c]);
        }
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn piola_interpolation_reproduces_affine_fields(v in tet(), coef in prop::collection::vec(-1.0..1.0f64, 12), q in 1usize..3) {
        let m = single(v);
        let f = |x: Vec3| -> Vec3 { std::array::from_fn(|c| coef[4 * c] + (0..3).map(|d| coef[4 * c + 1 + d] * x[d]).sum::<f64>()) };
        let g = m.geometry(0);
        for kind in [SpaceKind::Nedelec, SpaceKind::RaviartThomas] {
            let i = interpolate_element(&m, kind, q, 0, 2, &f).unwrap();
            for xh in [[0.1, 0.2, 0.3], [0.25; 3]] {
                let (val, der) = i.eval_ref(&g, xh).unwrap();
                let want = f(g.map(xh));
                prop_assert!((0..3).all(|c| (val[c] - want[c]).abs() < 1e-9), "{kind:?}");
                if kind == SpaceKind::RaviartThomas {
                    prop_assert!((der[0] - (coef[1] + coef[6] + coef[11])).abs() < 1e-9);
                } else {
                    let curl = [coef[10] - coef[7], coef[3] - coef[9], coef[5] - coef[2]];
                    prop_assert!((0..3).all(|c| (der[c] - curl[c]).abs() < 1e-9));
                }
            }
        }
    }
}

#[test]
fn mesh_text_round_trip() {
    for n in 1..=3 {
        let m = build_structured_cube_mesh(n).unwrap();
        let back = parse_mesh(&format_mesh(&m), None).unwrap();
        assert_eq!(back.num_tets(), m.num_tets());
        assert_eq!(back.num_vertices(), m.num_vertices());
        assert_eq!(back.faces.len(), m.faces.len());
        assert!((back.total_volume() - 1.0).abs() < 1e-13);
        assert_eq!(back.boundary_faces(), m.boundary_faces());
    }
}
