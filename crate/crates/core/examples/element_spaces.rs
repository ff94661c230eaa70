//! Nedelec and Raviart-Thomas interpolation on a single tetrahedron.

use curl_equilib::mesh::{BoundarySpec, TetMesh};
use curl_equilib::spaces::reference::{dim_nd, dim_rt, SpaceKind};
use curl_equilib::spaces::interpolate_element;

fn main() -> curl_equilib::Result<()> {
    let v = vec![[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.1, 0.9, 0.1], [0.2, 0.3, 1.0]];
    let mesh = TetMesh::new(v, vec![[0, 1, 2, 3]], &BoundarySpec::default())?;
    let g = mesh.geometry(0);
    let field = |x: [f64; 3]| [(x[1] * 2.0).sin(), x[0] * x[2], (x[0] + x[1]).cos()];
    let xh = [0.2, 0.3, 0.1];
    let x = g.map(xh);
    println!("field at {x:.3?}: {:.6?}", field(x));
    for kind in [SpaceKind::Nedelec, SpaceKind::RaviartThomas] {
        for q in 0..=4 {
            let f = interpolate_element(&mesh, kind, q, 0, 6, &field)?;
            let (val, _) = f.eval_ref(&g, xh)?;
            let dim = if kind == SpaceKind::Nedelec { dim_nd(q) } else { dim_rt(q) };
            let err = (0..3).map(|c| (val[c] - field(x)[c]).abs()).fold(0.0, f64::max);
            println!("{kind:?} q={q} ({dim:3} dofs): pointwise interpolation error {err:.3e}");
        }
    }
    Ok(())
}
