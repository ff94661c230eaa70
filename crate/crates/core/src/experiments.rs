//! Manufactured-solution cases, study drivers and CSV output.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibration::{equilibrate, EquilibrationOptions};
use crate::error::{Error, Result};
use crate::estimator::{doerfler_mark, estimator_report, EstimatorConstants, EstimatorReport};
use crate::geometry::{norm, sub, Vec3};
use crate::mesh::{build_lshape_mesh, build_structured_cube_mesh, load_mesh, BoundarySpec, TetMesh};
use crate::solver::{check_patch_orthogonality, solve_magnetic_potential, CurrentDensity, QuadConfig};
use crate::spaces::reference::MAX_DEGREE_LAGRANGE;

pub type VecFn = Arc<dyn Fn(Vec3) -> Vec3 + Send + Sync>;

/// Highest supported degree of the potential (`P_{p+1}` multipliers).
pub const MAX_POTENTIAL_DEGREE: usize = MAX_DEGREE_LAGRANGE - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CaseId {
    ConstJ,
    Sine,
    LShape,
    Custom,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::ConstJ => "const_j",
            CaseId::Sine => "sine",
            CaseId::LShape => "lshape",
            CaseId::Custom => "custom",
        })
    }
}

impl FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const_j" => Ok(CaseId::ConstJ),
            "sine" => Ok(CaseId::Sine),
            "lshape" => Ok(CaseId::LShape),
            "custom" => Ok(CaseId::Custom),
            _ => Err(Error::Config(format!("unknown case '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Convergence,
    PSweep,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    UnitCube,
    /// `L x (0, 1)` with the quadrant `x > 0, y < 0` of `(-1, 1)^2` removed.
    LShape,
    File(PathBuf),
}

impl Domain {
    /// Structured mesh with `n` cells per unit length, or the mesh file.
    pub fn build(&self, n: usize) -> Result<TetMesh> {
        match self {
            Domain::UnitCube => build_structured_cube_mesh(n),
            Domain::LShape => build_lshape_mesh(n, &BoundarySpec::default()),
            Domain::File(p) => load_mesh(p, None),
        }
    }

    pub fn contains(&self, x: Vec3) -> bool {
        let inside = |a: f64, lo: f64, hi: f64| a > lo && a < hi;
        match self {
            Domain::UnitCube => (0..3).all(|i| inside(x[i], 0.0, 1.0)),
            Domain::LShape => {
                inside(x[0], -1.0, 1.0) && inside(x[1], -1.0, 1.0) && inside(x[2], 0.0, 1.0) && !(x[0] > 0.0 && x[1] < 0.0)
            }
            Domain::File(_) => true,
        }
    }
}

#[derive(Clone)]
pub struct CaseDefinition {
    pub id: CaseId,
    pub j: CurrentDensity,
    pub exact_a: Option<VecFn>,
    pub exact_curl: Option<VecFn>,
    pub domain: Domain,
}

fn odd_terms(m: usize) -> Vec<f64> {
    (1..=m.max(1)).step_by(2).map(|n| n as f64).collect()
}

/// `A_3` of the constant-current solution, truncated to `n, m <= terms`.
/// Only odd indices contribute: the even ones vanish in the sine expansion of 1.
pub fn const_j_potential(terms: usize) -> VecFn {
    let ns = odd_terms(terms);
    Arc::new(move |x: Vec3| {
        let sx: Vec<f64> = ns.iter().map(|n| (n * PI * x[0]).sin()).collect();
        let sy: Vec<f64> = ns.iter().map(|m| (m * PI * x[1]).sin()).collect();
        let mut a = 0.0;
        for (i, n) in ns.iter().enumerate() {
            for (k, m) in ns.iter().enumerate() {
                a += sx[i] * sy[k] / (n * m * (n * n + m * m));
            }
        }
        [0.0, 0.0, 16.0 / PI.powi(4) * a]
    })
}

pub fn const_j_curl(terms: usize) -> VecFn {
    let ns = odd_terms(terms);
    Arc::new(move |x: Vec3| {
        let sx: Vec<f64> = ns.iter().map(|n| (n * PI * x[0]).sin()).collect();
        let cx: Vec<f64> = ns.iter().map(|n| (n * PI * x[0]).cos()).collect();
        let sy: Vec<f64> = ns.iter().map(|m| (m * PI * x[1]).sin()).collect();
        let cy: Vec<f64> = ns.iter().map(|m| (m * PI * x[1]).cos()).collect();
        let (mut d1, mut d2) = (0.0, 0.0);
        for (i, n) in ns.iter().enumerate() {
            for (k, m) in ns.iter().enumerate() {
                let c = 1.0 / (n * m * (n * n + m * m));
                d1 += c * n * cx[i] * sy[k];
                d2 += c * m * sx[i] * cy[k];
            }
        }
        let s = 16.0 / PI.powi(3);
        [s * d2, -s * d1, 0.0]
    })
}

fn smooth_cutoff(r: f64) -> (f64, f64, f64) {
    let s = ((r - 0.25) / 0.5).clamp(0.0, 1.0);
    if s <= 0.0 || s >= 1.0 {
        return (1.0 - s, 0.0, 0.0);
    }
    let chi = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    let d1 = -60.0 * s * s * (1.0 - s) * (1.0 - s);
    let d2 = -240.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
    (chi, d1, d2)
}

fn polar(x: Vec3) -> (f64, f64) {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let mut t = x[1].atan2(x[0]);
    if t < 0.0 {
        t += 2.0 * PI;
    }
    (r, t)
}

impl CaseDefinition {
    pub fn const_j(terms: usize) -> Self {
        CaseDefinition {
            id: CaseId::ConstJ,
            j: CurrentDensity::constant([0.0, 0.0, 1.0]),
            exact_a: Some(const_j_potential(terms)),
            exact_curl: Some(const_j_curl(terms)),
            domain: Domain::UnitCube,
        }
    }

    pub fn sine() -> Self {
        let tp = 2.0 * PI;
        CaseDefinition {
            id: CaseId::Sine,
            j: CurrentDensity::new(move |x| [2.0 * tp * tp * (tp * x[1]).sin() * (tp * x[2]).sin(), 0.0, 0.0])
                .with_divergence(|_| 0.0),
            exact_a: Some(Arc::new(move |x| [(tp * x[1]).sin() * (tp * x[2]).sin(), 0.0, 0.0])),
            exact_curl: Some(Arc::new(move |x| {
                [0.0, tp * (tp * x[1]).sin() * (tp * x[2]).cos(), -tp * (tp * x[1]).cos() * (tp * x[2]).sin()]
            })),
            domain: Domain::UnitCube,
        }
    }

    /// Singular field `(0, 0, chi(r) r^alpha sin(alpha theta))` on the L-shaped prism.
    pub fn lshape(alpha: f64) -> Self {
        let j = move |x: Vec3| {
            let (r, t) = polar(x);
            if r == 0.0 {
                return [0.0; 3];
            }
            let (_, c1, c2) = smooth_cutoff(r);
            let s = (alpha * t).sin();
            let lap = 2.0 * c1 * alpha * r.powf(alpha - 1.0) * s + (c2 + c1 / r) * r.powf(alpha) * s;
            [0.0, 0.0, -lap]
        };
        let a = move |x: Vec3| {
            let (r, t) = polar(x);
            [0.0, 0.0, smooth_cutoff(r).0 * r.powf(alpha) * (alpha * t).sin()]
        };
        let curl = move |x: Vec3| {
            let (r, t) = polar(x);
            if r == 0.0 {
                return [0.0; 3];
            }
            let (c0, c1, _) = smooth_cutoff(r);
            let u = r.powf(alpha) * (alpha * t).sin();
            let ur = alpha * r.powf(alpha - 1.0) * (alpha * t).sin();
            let ut = alpha * r.powf(alpha - 1.0) * (alpha * t).cos();
            let gr = c1 * u + c0 * ur;
            let gt = c0 * ut;
            let (ct, st) = (t.cos(), t.sin());
            let gx = gr * ct - gt * st;
            let gy = gr * st + gt * ct;
            [gy, -gx, 0.0]
        };
        CaseDefinition {
            id: CaseId::LShape,
            j: CurrentDensity::new(j).with_divergence(|_| 0.0),
            exact_a: Some(Arc::new(a)),
            exact_curl: Some(Arc::new(curl)),
            domain: Domain::LShape,
        }
    }

    pub fn custom(j: Vec3, mesh: PathBuf) -> Self {
        CaseDefinition { id: CaseId::Custom, j: CurrentDensity::constant(j), exact_a: None, exact_curl: None, domain: Domain::File(mesh) }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let mut c = match cfg.case {
            CaseId::ConstJ => Self::const_j(cfg.series_terms),
            CaseId::Sine => Self::sine(),
            CaseId::LShape => Self::lshape(cfg.lshape_alpha),
            CaseId::Custom => match &cfg.mesh_file {
                Some(p) => Self::custom(cfg.custom_j, p.clone()),
                None => return Err(Error::Config("case custom needs mesh_file".into())),
            },
        };
        if let Some(p) = &cfg.mesh_file {
            c.domain = Domain::File(p.clone());
        }
        Ok(c)
    }

    /// Compare the exact curl with central differences of the exact potential
    /// at `samples` random interior points. Returns the largest relative defect.
    pub fn self_check(&self, samples: usize, seed: u64) -> Result<f64> {
        let (Some(a), Some(c)) = (&self.exact_a, &self.exact_curl) else {
            return Ok(0.0);
        };
        let (lo, hi) = match self.domain {
            Domain::LShape => ([-0.95, -0.95, 0.05], [0.95, 0.95, 0.95]),
            _ => ([0.05; 3], [0.95; 3]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut got = 0;
        while got < samples {
            let x: Vec3 = std::array::from_fn(|i| rng.random_range(lo[i]..hi[i]));
            if !self.domain.contains(x) || (self.domain == Domain::LShape && polar(x).0 < 0.05) {
                continue;
            }
            got += 1;
            let mut d = [[0.0; 3]; 3];
            for (k, dk) in d.iter_mut().enumerate() {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let (ap, am) = (a(xp), a(xm));
                for i in 0..3 {
                    dk[i] = (ap[i] - am[i]) / (2.0 * h);
                }
            }
            let fd = [d[1][2] - d[2][1], d[2][0] - d[0][2], d[0][1] - d[1][0]];
            let ex = c(x);
            worst = worst.max(norm(sub(fd, ex)) / norm(ex).max(1.0));
        }
        if worst > 1e-6 {
            return Err(Error::Config(format!("case {}: exact curl inconsistent with potential ({worst:.3e})", self.id)));
        }
        Ok(worst)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub case: CaseId,
    pub study: Study,
    pub mesh_n: Vec<usize>,
    pub mesh_file: Option<PathBuf>,
    pub degrees: Vec<usize>,
    pub quad: QuadConfig,
    /// Exactness of the exact-error rule is `2p + error_extra`.
    pub error_extra: usize,
    pub series_terms: usize,
    pub lshape_alpha: f64,
    pub custom_j: Vec3,
    pub doerfler_theta: f64,
    pub constants: EstimatorConstants,
    pub out: Option<PathBuf>,
    pub verify: bool,
    /// When off the `seconds` column is written as 0 so that output is reproducible.
    pub timing: bool,
    pub dump_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            case: CaseId::ConstJ,
            study: Study::Convergence,
            mesh_n: vec![1, 2],
            mesh_file: None,
            degrees: vec![1],
            quad: QuadConfig::default(),
            error_extra: 8,
            series_terms: 100,
            lshape_alpha: 2.0 / 3.0,
            custom_j: [0.0, 0.0, 1.0],
            doerfler_theta: 0.5,
            constants: EstimatorConstants::default(),
            out: None,
            verify: false,
            timing: false,
            dump_dir: None,
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "case",
    "study",
    "mesh_n",
    "mesh_file",
    "degrees",
    "volume_extra",
    "data_extra",
    "error_extra",
    "series_terms",
    "lshape_alpha",
    "custom_j",
    "doerfler_theta",
    "c_pf",
    "c_lift",
    "c_lift_certified",
    "out",
    "verify",
    "timing",
    "dump_dir",
];

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "case" => self.case = v.parse()?,
            "study" => {
                self.study = match v {
                    "convergence" => Study::Convergence,
                    "p_sweep" | "psweep" => Study::PSweep,
                    _ => return Err(Error::Config(format!("unknown study '{v}'"))),
                }
            }
            "mesh_n" => self.mesh_n = parse_list(key, v)?,
            "mesh_file" => self.mesh_file = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "degrees" => self.degrees = parse_list(key, v)?,
            "volume_extra" => self.quad.volume_extra = parse_one(key, v)?,
            "data_extra" => self.quad.data_extra = parse_one(key, v)?,
            "error_extra" => self.error_extra = parse_one(key, v)?,
            "series_terms" => self.series_terms = parse_one(key, v)?,
            "lshape_alpha" => self.lshape_alpha = parse_one(key, v)?,
            "custom_j" => {
                let c: Vec<f64> = parse_list(key, v)?;
                if c.len() != 3 {
                    return Err(Error::Config("custom_j needs three components".into()));
                }
                self.custom_j = [c[0], c[1], c[2]];
            }
            "doerfler_theta" => self.doerfler_theta = parse_one(key, v)?,
            "c_pf" => self.constants.c_pf = parse_one(key, v)?,
            "c_lift" => self.constants.c_lift = parse_one(key, v)?,
            "c_lift_certified" => self.constants.c_lift_certified = parse_bool(key, v)?,
            "out" => self.out = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "verify" => self.verify = parse_bool(key, v)?,
            "timing" => self.timing = parse_bool(key, v)?,
            "dump_dir" => self.dump_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            k => return Err(Error::Config(format!("unknown key '{k}'"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
            self.set(k, v).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() {
            return Err(Error::Config("degree list is empty".into()));
        }
        if self.mesh_file.is_none() && self.mesh_n.is_empty() {
            return Err(Error::Config("mesh list is empty".into()));
        }
        if self.mesh_n.contains(&0) {
            return Err(Error::Config("mesh_n entries must be positive".into()));
        }
        if let Some(&p) = self.degrees.iter().find(|&&p| p > MAX_POTENTIAL_DEGREE) {
            return Err(Error::Config(format!("degree {p} above the supported maximum {MAX_POTENTIAL_DEGREE}")));
        }
        if self.series_terms < 1 {
            return Err(Error::Config("series_terms must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.doerfler_theta) {
            return Err(Error::Config("doerfler_theta must lie in [0, 1]".into()));
        }
        if self.study == Study::PSweep && self.mesh_file.is_none() && self.mesh_n.len() != 1 {
            return Err(Error::Config("p_sweep needs a single mesh".into()));
        }
        Ok(())
    }

    fn meshes(&self) -> Vec<usize> {
        if self.mesh_file.is_some() {
            vec![0]
        } else {
            self.mesh_n.clone()
        }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub case: String,
    pub p: usize,
    pub n: usize,
    pub h: f64,
    pub dofs: usize,
    pub err: f64,
    pub eta: f64,
    pub eta_osc: f64,
    pub eff: f64,
    pub equil_res: f64,
    pub seconds: f64,
}

pub const CSV_HEADER: [&str; 11] = ["case", "p", "N", "h", "dofs", "err", "eta", "eta_osc", "eff", "equil_res", "seconds"];

/// Everything computed for one (mesh, degree) pair.
pub struct RunOutput {
    pub row: ResultRow,
    pub report: EstimatorReport,
    pub failures: Vec<String>,
    pub orthogonality: f64,
    pub marked: usize,
}

/// Solve, equilibrate and estimate on one mesh.
pub fn run_single(case: &CaseDefinition, mesh: &TetMesh, n: usize, p: usize, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let t0 = Instant::now();
    let sol = solve_magnetic_potential(mesh, p, &case.j, cfg.quad)?;
    log::debug!("potential: {:.2?}", t0.elapsed());
    let opts = EquilibrationOptions { verify: cfg.verify, dump_dir: cfg.dump_dir.clone(), ..Default::default() };
    let eq = equilibrate(mesh, &sol, &case.j, opts)?;
    log::debug!("equilibration: {:.2?}", t0.elapsed());
    let exact = case.exact_curl.clone();
    let report = estimator_report(
        mesh,
        &sol,
        &eq,
        exact.as_ref().map(|f| f.as_ref() as &(dyn Fn(Vec3) -> Vec3 + Sync)),
        Some(cfg.error_extra),
        cfg.constants,
    )?;
    log::debug!("estimator: {:.2?}", t0.elapsed());
    let seconds = if cfg.timing { t0.elapsed().as_secs_f64() } else { 0.0 };
    let mut failures: Vec<String> = eq.checks.failures();
    let orthogonality = if cfg.verify { check_patch_orthogonality(mesh, &sol)? } else { f64::NAN };
    if case.j.is_piecewise_rt(p) {
        if cfg.verify && !(orthogonality <= 1e-9) {
            failures.push(format!("patch orthogonality residual {orthogonality:.3e} exceeds 1e-9"));
        }
        if let Some(e) = report.error {
            if report.eta_tot < e {
                failures.push(format!("estimate {:.6e} below error {e:.6e}", report.eta_tot));
            }
        }
    }
    let marked = doerfler_mark(&report.eta_k, cfg.doerfler_theta).len();
    let err = report.error.unwrap_or(f64::NAN);
    let row = ResultRow {
        case: case.id.to_string(),
        p,
        n,
        h: mesh.mesh_size(),
        dofs: sol.nd_space().n_free,
        err,
        eta: report.eta,
        eta_osc: report.eta_osc,
        eff: report.effectivity.unwrap_or(f64::NAN),
        equil_res: eq.checks.equilibration_residual,
        seconds,
    };
    for f in &failures {
        log::warn!("{} p={p} N={n}: {f}", case.id);
    }
    log::info!(
        "{} p={p} N={n}: dofs {} err {:.4e} eta {:.4e} eff {:.4} equil {:.2e}, {marked} of {} elements marked",
        case.id,
        row.dofs,
        row.err,
        row.eta,
        row.eff,
        row.equil_res,
        mesh.num_tets()
    );
    Ok(RunOutput { row, report, failures, orthogonality, marked })
}

pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<String>,
}

fn run_pairs(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let case = CaseDefinition::from_config(cfg)?;
    case.self_check(20, 7)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for n in cfg.meshes() {
        let mesh = case.domain.build(n)?;
        for &p in &cfg.degrees {
            let out = run_single(&case, &mesh, n, p, cfg)
                .map_err(|e| Error::PostCheck(format!("case {} p={p} N={n}: {e}", case.id)))?;
            failures.extend(out.failures.iter().map(|f| format!("case {} p={p} N={n}: {f}", case.id)));
            rows.push(out.row);
        }
    }
    rows.sort_by(|a, b| a.case.cmp(&b.case).then(a.p.cmp(&b.p)).then(a.n.cmp(&b.n)));
    Ok(StudyOutput { rows, failures })
}

/// One row per (mesh, degree) pair.
pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    run_pairs(cfg)
}

/// Degrees on a single mesh.
pub fn run_p_sweep(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    if cfg.mesh_file.is_none() && cfg.mesh_n.len() != 1 {
        return Err(Error::Config("p_sweep needs a single mesh".into()));
    }
    run_pairs(cfg)
}

pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    match cfg.study {
        Study::Convergence => run_convergence_study(cfg),
        Study::PSweep => run_p_sweep(cfg),
    }
}

/// Rates between consecutive rows: `log2(e_i / e_{i+1})` when `h` halves,
/// `log(e_i / e_{i+1}) / log(h_i / h_{i+1})` otherwise.
pub fn observed_rates(rows: &[ResultRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| {
            let r = w[0].err / w[1].err;
            let hr = w[0].h / w[1].h;
            if (hr - 2.0).abs() < 1e-12 {
                r.log2()
            } else {
                r.ln() / hr.ln()
            }
        })
        .collect()
}

/// Shortest round-trip scientific form.
fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.case.clone(),
            r.p.to_string(),
            r.n.to_string(),
            num(r.h),
            r.dofs.to_string(),
            num(r.err),
            num(r.eta),
            num(r.eta_osc),
            num(r.eff),
            num(r.equil_res),
            num(r.seconds),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse { line: i + 2, msg: format!("column {}", CSV_HEADER[k]) })
        };
        rows.push(ResultRow {
            case: rec.get(0).unwrap_or("").to_string(),
            p: f(1)? as usize,
            n: f(2)? as usize,
            h: f(3)?,
            dofs: f(4)? as usize,
            err: f(5)?,
            eta: f(6)?,
            eta_osc: f(7)?,
            eff: f(8)?,
            equil_res: f(9)?,
            seconds: f(10)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(h: f64, err: f64) -> ResultRow {
        ResultRow { case: "x".into(), p: 1, n: 1, h, dofs: 0, err, eta: 0.0, eta_osc: 0.0, eff: 0.0, equil_res: 0.0, seconds: 0.0 }
    }

    #[test]
    fn rates() {
        let r = observed_rates(&[row(1.0, 1.0), row(0.5, 0.25), row(0.25, 0.25 / 8.0)]);
        assert_eq!(r, vec![2.0, 3.0]);
        let r = observed_rates(&[row(1.0, 1.0), row(1.0 / 3.0, 1.0 / 9.0)]);
        assert!((r[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::parse("# comment\ncase = sine\ndegrees = 1, 2 # inline\nmesh_n = 1,2,4\nverify = true\n").unwrap();
        assert_eq!(c.case, CaseId::Sine);
        assert_eq!(c.degrees, vec![1, 2]);
        assert_eq!(c.mesh_n, vec![1, 2, 4]);
        assert!(c.verify);
        assert!(ExperimentConfig::parse("bogus = 1").is_err());
        assert!(ExperimentConfig::parse("degrees =").is_err());
        assert!(ExperimentConfig::parse("series_terms = 0").is_err());
        assert!(ExperimentConfig::parse("degrees = 5").is_err());
        match ExperimentConfig::parse("case = sine\nno equals sign") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cases_are_self_consistent() {
        for c in [CaseDefinition::const_j(60), CaseDefinition::sine(), CaseDefinition::lshape(2.0 / 3.0)] {
            assert!(c.self_check(20, 3).unwrap() < 1e-6, "{}", c.id);
        }
    }
}
