use std::f64::consts::PI;
use std::process::Command;

use curl_equilib::equilibration::{equilibrate, EquilibrationOptions};
use curl_equilib::estimator::{estimator_report, exact_error, EstimatorConstants};
use curl_equilib::experiments::{read_csv, run_study, write_csv, CaseDefinition, ExperimentConfig};
use curl_equilib::geometry::{norm, sub};
use curl_equilib::mesh::build_structured_cube_mesh;
use curl_equilib::quadrature::gauss_rule_tet;
use curl_equilib::solver::{solve_magnetic_potential, CurrentDensity, QuadConfig};
use curl_equilib::spaces::reference::volume_tabulation;

#[test]
fn zero_current_gives_zero_flux_and_estimate() {
    let mesh = build_structured_cube_mesh(1).unwrap();
    let j = CurrentDensity::zero();
    let sol = solve_magnetic_potential(&mesh, 1, &j, QuadConfig::default()).unwrap();
    let eq = equilibrate(&mesh, &sol, &j, EquilibrationOptions::default()).unwrap();
    assert!(eq.flux.sigma.coeffs.iter().all(|c| *c == 0.0));
    let rep = estimator_report(&mesh, &sol, &eq, None, None, EstimatorConstants::default()).unwrap();
    assert_eq!(rep.eta, 0.0);
    assert_eq!(rep.eta_osc, 0.0);
}

#[test]
fn error_of_zero_potential_is_norm_of_curl() {
    let mesh = build_structured_cube_mesh(2).unwrap();
    let case = CaseDefinition::sine();
    let mut sol = solve_magnetic_potential(&mesh, 1, &case.j, QuadConfig::default()).unwrap();
    sol.a_h.coeffs.iter_mut().for_each(|c| *c = 0.0);
    let f = case.exact_curl.unwrap();
    let (_, e) = exact_error(&mesh, &sol, f.as_ref(), Some(16)).unwrap();
    assert!((e - PI * 2f64.sqrt()).abs() < 1e-10, "{e}");
}

#[test]
fn series_truncation_is_stable() {
    let mesh = build_structured_cube_mesh(1).unwrap();
    let coarse = CaseDefinition::const_j(100);
    let fine = CaseDefinition::const_j(400);
    let sol = solve_magnetic_potential(&mesh, 1, &coarse.j, QuadConfig::default()).unwrap();
    let (_, a) = exact_error(&mesh, &sol, coarse.exact_curl.unwrap().as_ref(), None).unwrap();
    let (_, b) = exact_error(&mesh, &sol, fine.exact_curl.unwrap().as_ref(), None).unwrap();
    assert!((a - b).abs() < 1e-3 * b, "{a} {b}");
}

#[test]
fn constant_current_flux_is_equilibrated_and_bounds_the_error() {
    let mesh = build_structured_cube_mesh(1).unwrap();
    let case = CaseDefinition::const_j(100);
    let sol = solve_magnetic_potential(&mesh, 1, &case.j, QuadConfig::default()).unwrap();
    let opts = EquilibrationOptions { verify: true, ..Default::default() };
    let eq = equilibrate(&mesh, &sol, &case.j, opts).unwrap();
    assert!(eq.checks.failures().is_empty(), "{:?}", eq.checks.failures());
    // curl sigma = j pointwise
    let p = eq.flux.sigma.space.degree;
    let rule = gauss_rule_tet(4).unwrap();
    let tab = volume_tabulation(eq.flux.sigma.space.kind, p, 4).unwrap();
    for k in 0..mesh.num_tets() {
        let (_, c) = eq.flux.sigma.eval_tab(&mesh, k, &tab);
        for q in 0..rule.len() {
            assert!(norm(sub(c[q], [0.0, 0.0, 1.0])) < 1e-10);
        }
    }
    // delta^a is stable with respect to delta
    for (k, parts) in eq.delta_elem.iter().enumerate() {
        let g = mesh.geometry(k);
        let rule = gauss_rule_tet(8).unwrap();
        let (mut total, mut worst) = (0.0, 0.0f64);
        let mut part_norms = vec![0.0; parts.len()];
        for (xh, w) in rule.points.iter().zip(&rule.weights) {
            let (d, _) = eq.delta.eval_ref(&mesh, k, *xh);
            total += w * d.iter().map(|v| v * v).sum::<f64>();
            for (i, f) in parts.iter().enumerate() {
                let (v, _) = f.eval_ref(&g, *xh).unwrap();
                part_norms[i] += w * v.iter().map(|v| v * v).sum::<f64>();
            }
        }
        for n in part_norms {
            if total > 1e-24 {
                worst = worst.max((n / total).sqrt());
            }
        }
        assert!(worst <= 10.0, "tet {k}: ratio {worst}");
    }
    let rep = estimator_report(&mesh, &sol, &eq, Some(case.exact_curl.unwrap().as_ref()), None, EstimatorConstants::default())
        .unwrap();
    assert!(rep.guaranteed());
    assert!(rep.eta_tot >= rep.error.unwrap());
}

#[test]
fn sine_data_oscillation_decay() {
    let case = CaseDefinition::sine();
    let total = |n: usize| {
        let mesh = build_structured_cube_mesh(n).unwrap();
        let sol = solve_magnetic_potential(&mesh, 1, &case.j, QuadConfig::default()).unwrap();
        let eq = equilibrate(&mesh, &sol, &case.j, EquilibrationOptions::default()).unwrap();
        eq.osc.iter().map(|o| o.eta_osc_j * o.eta_osc_j).sum::<f64>().sqrt()
    };
    // N = 2 is still pre-asymptotic (the mesh is aligned with the zeros of
    // j); from N = 4 on the ratio tends to 8
    let ratio = total(2) / total(4);
    assert!((3.5..5.0).contains(&ratio), "{ratio}");
}

#[test]
fn sine_p_sweep_error_decays_fast() {
    let cfg = ExperimentConfig::parse("case = sine\nstudy = p_sweep\ndegrees = 1,2,3,4\nmesh_n = 1\n").unwrap();
    let out = run_study(&cfg).unwrap();
    let e: Vec<f64> = out.rows.iter().map(|r| r.err).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]), "{e:?}");
    assert!(e[3] < 0.1 * e[0], "{e:?}");
    assert!(out.rows.iter().all(|r| (0.85..=1.1).contains(&r.eff)));
}

#[test]
fn csv_is_deterministic_and_round_trips() {
    let cfg = ExperimentConfig::parse("case = const_j\ndegrees = 1,2\nmesh_n = 1\nseries_terms = 60\n").unwrap();
    let render = || {
        let mut buf = Vec::new();
        write_csv(&run_study(&cfg).unwrap().rows, &mut buf).unwrap();
        buf
    };
    let a = render();
    assert_eq!(a, render());
    let text = String::from_utf8(a.clone()).unwrap();
    assert!(text.starts_with("case,p,N,h,dofs,err,eta,eta_osc,eff,equil_res,seconds\n"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    std::fs::write(&path, &a).unwrap();
    let rows = read_csv(&path).unwrap();
    let mut again = Vec::new();
    write_csv(&rows, &mut again).unwrap();
    assert_eq!(a, again);
}

#[test]
fn cli_runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    let out = dir.path().join("out.csv");
    std::fs::write(&cfg, "# smallest run\ncase = const_j\ndegrees = 1\nmesh_n = 1\nseries_terms = 60\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_curl-equilib"))
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--verify", "--out"])
        .arg(&out)
        .env("RUST_LOG", "error")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let rows = read_csv(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].eff > 1.0 && rows[0].equil_res < 1e-10);

    std::fs::write(&cfg, "case = nonsense\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_curl-equilib")).args(["run", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(1));
}
