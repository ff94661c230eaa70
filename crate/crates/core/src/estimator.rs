//! Estimator assembly, exact errors for manufactured solutions and Dörfler marking.

use rayon::prelude::*;

use crate::equilibration::EquilibrationResult;
use crate::error::Result;
use crate::geometry::{dot, sub, Vec3};
use crate::mesh::TetMesh;
use crate::quadrature::gauss_rule_tet;
use crate::solver::MagneticPotentialSolution;
use crate::spaces::reference::volume_tabulation;
use crate::spaces::{CoefficientField, SpaceKind};

/// Oscillation below this fraction of `eta` is treated as zero.
pub const OSC_ROUNDOFF: f64 = 1e-10;

/// Constants of the oscillation term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConstants {
    pub c_pf: f64,
    pub c_lift: f64,
    /// Whether `c_lift` is a proven bound for the domain at hand.
    pub c_lift_certified: bool,
}

impl Default for EstimatorConstants {
    fn default() -> Self {
        EstimatorConstants { c_pf: 1.0 / std::f64::consts::PI, c_lift: 1.0, c_lift_certified: false }
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorReport {
    pub eta_k: Vec<f64>,
    pub eta: f64,
    pub eta_osc: f64,
    pub eta_tot: f64,
    pub error: Option<f64>,
    pub error_k: Option<Vec<f64>>,
    /// `eta / error`.
    pub effectivity: Option<f64>,
    pub constants: EstimatorConstants,
}

impl EstimatorReport {
    /// Whether `eta_tot` is a guaranteed bound: it is when the oscillation term
    /// vanishes up to round-off, otherwise only if `c_lift` is certified.
    pub fn guaranteed(&self) -> bool {
        self.eta_osc <= OSC_ROUNDOFF * self.eta || self.constants.c_lift_certified
    }
}

fn rss(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Elementwise `|sigma - curl A_h|_K` and their root sum of squares.
pub fn eta_elements(mesh: &TetMesh, sigma: &CoefficientField, sol: &MagneticPotentialSolution) -> Result<(Vec<f64>, f64)> {
    let p = sol.degree;
    let ex = 2 * (p + 1) + 2;
    let rule = gauss_rule_tet(ex)?;
    let ts = volume_tabulation(sigma.space.kind, sigma.space.degree, ex)?;
    let ta = volume_tabulation(SpaceKind::Nedelec, p, ex)?;
    let eta_k: Vec<f64> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|k| {
            let det = mesh.geometry(k).measure_scale();
            let (s, _) = sigma.eval_tab(mesh, k, &ts);
            let (_, c) = sol.a_h.eval_tab(mesh, k, &ta);
            let mut e2 = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                let r = sub(s[q], c[q]);
                e2 += w * det * dot(r, r);
            }
            e2.sqrt()
        })
        .collect();
    let eta = rss(&eta_k);
    Ok((eta_k, eta))
}

/// Elementwise `|curl A - curl A_h|_K` with a rule of exactness `2p + extra`
/// (`extra` defaults to 8) and the total.
pub fn exact_error(
    mesh: &TetMesh,
    sol: &MagneticPotentialSolution,
    exact_curl: &(dyn Fn(Vec3) -> Vec3 + Sync),
    extra: Option<usize>,
) -> Result<(Vec<f64>, f64)> {
    let p = sol.degree;
    let ex = 2 * p + extra.unwrap_or(8);
    let rule = gauss_rule_tet(ex)?;
    let ta = volume_tabulation(SpaceKind::Nedelec, p, ex)?;
    let err_k: Vec<f64> = (0..mesh.num_tets())
        .into_par_iter()
        .map(|k| {
            let g = mesh.geometry(k);
            let det = g.measure_scale();
            let (_, c) = sol.a_h.eval_tab(mesh, k, &ta);
            let mut e2 = 0.0;
            for (q, w) in rule.weights.iter().enumerate() {
                let r = sub(exact_curl(g.map(rule.points[q])), c[q]);
                e2 += w * det * dot(r, r);
            }
            e2.sqrt()
        })
        .collect();
    let err = rss(&err_k);
    Ok((err_k, err))
}

/// `2 c_lift (sum_a c_pf^2 t_a^2)^{1/2}`.
pub fn oscillation_total(terms: &[f64], constants: &EstimatorConstants) -> f64 {
    2.0 * constants.c_lift * constants.c_pf * rss(terms)
}

/// Smallest set of largest indicators carrying `theta^2` of the total squared
/// estimate. Ties are broken by element index.
pub fn doerfler_mark(eta_k: &[f64], theta: f64) -> Vec<usize> {
    let theta = theta.clamp(0.0, 1.0);
    let mut order: Vec<usize> = (0..eta_k.len()).collect();
    order.sort_by(|&a, &b| eta_k[b].total_cmp(&eta_k[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&k| eta_k[k] * eta_k[k]).sum();
    let target = theta * theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for k in order {
        if acc >= target {
            break;
        }
        acc += eta_k[k] * eta_k[k];
        out.push(k);
    }
    out
}

/// Full report for one equilibrated solution.
pub fn estimator_report(
    mesh: &TetMesh,
    sol: &MagneticPotentialSolution,
    eq: &EquilibrationResult,
    exact_curl: Option<&(dyn Fn(Vec3) -> Vec3 + Sync)>,
    error_extra: Option<usize>,
    constants: EstimatorConstants,
) -> Result<EstimatorReport> {
    let (eta_k, eta) = eta_elements(mesh, &eq.flux.sigma, sol)?;
    let terms: Vec<f64> = eq.osc.iter().map(|o| o.eta_osc_jh).collect();
    let eta_osc = oscillation_total(&terms, &constants);
    let (error_k, error) = match exact_curl {
        Some(f) => {
            let (ek, e) = exact_error(mesh, sol, f, error_extra)?;
            (Some(ek), Some(e))
        }
        None => (None, None),
    };
    let effectivity = error.map(|e| eta / e);
    Ok(EstimatorReport { eta_k, eta, eta_osc, eta_tot: eta + eta_osc, error, error_k, effectivity, constants })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marking() {
        // theta^2 * 14 = 8.96 is reached by the largest alone
        assert_eq!(doerfler_mark(&[3.0, 2.0, 1.0, 0.0], 0.8), vec![0]);
        assert_eq!(doerfler_mark(&[3.0, 2.0, 1.0, 0.0], 0.9), vec![0, 1]);
        assert!(doerfler_mark(&[3.0, 2.0, 1.0], 0.0).is_empty());
        let mut all = doerfler_mark(&[1.0, 0.0, 2.0, 2.0], 1.0);
        all.sort_unstable();
        assert_eq!(all, vec![0, 2, 3]);
        assert_eq!(doerfler_mark(&[1.0, 1.0, 1.0], 0.5), vec![0]);
    }

    #[test]
    fn oscillation_closed_form() {
        let c = EstimatorConstants::default();
        let v = oscillation_total(&[0.5; 9], &c);
        assert!((v - 2.0 * c.c_pf * 0.5 * 3.0).abs() < 1e-15);
        assert_eq!(oscillation_total(&[0.0; 4], &c), 0.0);
    }
}
