//! Nedelec discretization of the curl-curl problem with a Lagrange multiplier gauge.

use curl_equilib::experiments::CaseDefinition;
use curl_equilib::mesh::build_structured_cube_mesh;
use curl_equilib::solver::{check_patch_orthogonality, galerkin_residual, solve_magnetic_potential, QuadConfig};
use curl_equilib::estimator::exact_error;

fn main() -> curl_equilib::Result<()> {
    let case = CaseDefinition::sine();
    let curl = case.exact_curl.clone().unwrap();
    for p in 1..=2 {
        for n in [1, 2] {
            let mesh = build_structured_cube_mesh(n)?;
            let sol = solve_magnetic_potential(&mesh, p, &case.j, QuadConfig::default())?;
            let (_, err) = exact_error(&mesh, &sol, curl.as_ref(), None)?;
            println!(
                "p={p} N={n}: {} unknowns, |curl(A - A_h)| = {err:.4e}, Galerkin residual {:.1e}, orthogonality {:.1e}, |grad s_h|/|j| = {:.1e}",
                sol.nd_space().n_free,
                galerkin_residual(&mesh, &sol)?,
                check_patch_orthogonality(&mesh, &sol)?,
                sol.multiplier_relative()
            );
        }
    }
    Ok(())
}
