//! Estimator, effectivity and Dorfler marking for the smooth sine case.

use curl_equilib::equilibration::{equilibrate, EquilibrationOptions};
use curl_equilib::estimator::{doerfler_mark, estimator_report, EstimatorConstants};
use curl_equilib::experiments::CaseDefinition;
use curl_equilib::mesh::build_structured_cube_mesh;
use curl_equilib::solver::{solve_magnetic_potential, QuadConfig};

fn main() -> curl_equilib::Result<()> {
    let case = CaseDefinition::sine();
    let mesh = build_structured_cube_mesh(2)?;
    let sol = solve_magnetic_potential(&mesh, 1, &case.j, QuadConfig::default())?;
    let eq = equilibrate(&mesh, &sol, &case.j, EquilibrationOptions::default())?;
    let curl = case.exact_curl.clone().unwrap();
    let rep = estimator_report(&mesh, &sol, &eq, Some(curl.as_ref()), None, EstimatorConstants::default())?;
    println!("error   {:.5e}", rep.error.unwrap());
    println!("eta     {:.5e}  (effectivity {:.4})", rep.eta, rep.effectivity.unwrap());
    println!("eta_osc {:.5e}  guaranteed: {}", rep.eta_osc, rep.guaranteed());
    let marked = doerfler_mark(&rep.eta_k, 0.5);
    println!("theta = 0.5 marks {} of {} elements", marked.len(), mesh.num_tets());
    Ok(())
}
