//! Collapsed Gauss rules on the reference tetrahedron.

use curl_equilib::quadrature::gauss_rule_tet;

fn main() -> curl_equilib::Result<()> {
    for e in [0, 2, 4, 8, 12] {
        let rule = gauss_rule_tet(e)?;
        let x2 = rule.integrate(|x| x[0] * x[0]);
        let vol = rule.integrate(|_| 1.0);
        println!("exactness {e:2}: {:4} points, volume {vol:.15}, int x^2 = {x2:.15} (1/60 = {:.15})", rule.len(), 1.0 / 60.0);
    }
    Ok(())
}
