//! Patchwise flux equilibration with every post-check enabled.

use curl_equilib::equilibration::{equilibrate, EquilibrationOptions};
use curl_equilib::experiments::CaseDefinition;
use curl_equilib::mesh::build_structured_cube_mesh;
use curl_equilib::solver::{solve_magnetic_potential, QuadConfig};

fn main() -> curl_equilib::Result<()> {
    let case = CaseDefinition::const_j(100);
    let mesh = build_structured_cube_mesh(1)?;
    let sol = solve_magnetic_potential(&mesh, 1, &case.j, QuadConfig::default())?;
    let eq = equilibrate(&mesh, &sol, &case.j, EquilibrationOptions { verify: true, ..Default::default() })?;
    let c = &eq.checks;
    println!("{} patches checked", c.checked_patches);
    println!("|j - curl sigma| / |j|      {:.2e}", c.equilibration_residual);
    println!("tangential jump of sigma    {:.2e}", c.tangential_jump);
    println!("sum_a j_h^a - j             {:.2e}", c.decomposition);
    println!("div j_h^a, normal trace     {:.2e}, {:.2e}", c.jh_div, c.jh_trace);
    println!("div delta, moments, split   {:.2e}, {:.2e}, {:.2e}", c.delta_div, c.delta_moments, c.delta_split);
    println!("failures: {:?}", c.failures());
    Ok(())
}
