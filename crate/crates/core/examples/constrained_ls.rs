//! Equality-constrained least squares: saddle solve against the dense null-space oracle.

use curl_equilib::linalg::{dense_nullspace_qp, solve_constrained_ls, ConstrainedLsProblem, CsrMatrix, SparseSymMatrix};

fn main() -> curl_equilib::Result<()> {
    // 1D Laplacian plus mass, with the mean of x and two point values prescribed
    let n = 40;
    let mut trips = Vec::new();
    for i in 0..n {
        trips.push((i, i, 2.0 + 1.0 / n as f64));
        if i + 1 < n {
            trips.push((i, i + 1, -1.0));
            trips.push((i + 1, i, -1.0));
        }
    }
    let m = SparseSymMatrix::from_triplets(n, trips)?;
    let t: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64).sin()).collect();
    let mut c = vec![(0, 0, 1.0), (1, n - 1, 1.0)];
    c.extend((0..n).map(|j| (2, j, 1.0 / n as f64)));
    // the last row repeats the first one
    c.push((3, 0, 2.0));
    let c = CsrMatrix::from_triplets(4, n, c);
    let p = ConstrainedLsProblem::new(m, t, c, vec![0.0, 1.0, 0.5, 0.0]);
    let a = solve_constrained_ls(&p)?;
    let b = dense_nullspace_qp(&p)?;
    let diff = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    println!("objective {:.12e} (oracle {:.12e})", a.objective, b.objective);
    println!("constraint residual {:.2e}, max difference to oracle {diff:.2e}", a.constraint_residual);
    Ok(())
}
