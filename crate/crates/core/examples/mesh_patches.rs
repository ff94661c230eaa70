//! Structured cube mesh, vertex patches and the boundary patch check.

use curl_equilib::mesh::{build_structured_cube_mesh, validate_patch_geometry, vertex_patch, PatchKind};

fn main() -> curl_equilib::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mesh = build_structured_cube_mesh(n)?;
    println!(
        "N={n}: {} vertices, {} edges, {} faces, {} tets, h = {:.4}",
        mesh.num_vertices(),
        mesh.edges.len(),
        mesh.faces.len(),
        mesh.num_tets(),
        mesh.mesh_size()
    );
    let mut counts = [0usize; 3];
    for a in 0..mesh.num_vertices() {
        let p = vertex_patch(&mesh, a);
        counts[match p.kind {
            PatchKind::Interior => 0,
            PatchKind::DirichletBoundary => 1,
            PatchKind::NeumannBoundary => 2,
        }] += 1;
    }
    println!("patches: {} interior, {} Dirichlet, {} Neumann", counts[0], counts[1], counts[2]);
    println!("boundary patch violators: {:?}", validate_patch_geometry(&mesh));
    Ok(())
}
