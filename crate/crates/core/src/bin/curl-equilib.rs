use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use curl_equilib::experiments::{observed_rates, run_study, write_csv, ExperimentConfig};

#[derive(Parser)]
#[command(name = "curl-equilib", version, about = "Equilibrated flux error estimates for the curl-curl problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study or degree sweep and write CSV.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    /// `convergence` or `p_sweep`.
    #[arg(long)]
    study: Option<String>,
    #[arg(long, value_name = "LIST")]
    degrees: Option<String>,
    #[arg(long, value_name = "LIST")]
    mesh_n: Option<String>,
    #[arg(long)]
    mesh_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    verify: bool,
    /// Record wall times instead of zeros.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    series_terms: Option<usize>,
    #[arg(long)]
    volume_extra: Option<usize>,
    #[arg(long)]
    data_extra: Option<usize>,
    #[arg(long)]
    error_extra: Option<usize>,
    #[arg(long)]
    lshape_alpha: Option<f64>,
    #[arg(long, value_name = "X,Y,Z")]
    custom_j: Option<String>,
    #[arg(long)]
    doerfler_theta: Option<f64>,
    #[arg(long)]
    c_pf: Option<f64>,
    #[arg(long)]
    c_lift: Option<f64>,
    #[arg(long)]
    c_lift_certified: bool,
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

fn build_config(a: &RunArgs) -> curl_equilib::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = &a.config {
        cfg.apply_text(&std::fs::read_to_string(p)?)?;
    }
    let path = |p: &PathBuf| p.display().to_string();
    let flags: [(&str, Option<String>); 16] = [
        ("case", a.case.clone()),
        ("study", a.study.clone()),
        ("degrees", a.degrees.clone()),
        ("mesh_n", a.mesh_n.clone()),
        ("mesh_file", a.mesh_file.as_ref().map(path)),
        ("out", a.out.as_ref().map(path)),
        ("series_terms", a.series_terms.map(|v| v.to_string())),
        ("volume_extra", a.volume_extra.map(|v| v.to_string())),
        ("data_extra", a.data_extra.map(|v| v.to_string())),
        ("error_extra", a.error_extra.map(|v| v.to_string())),
        ("lshape_alpha", a.lshape_alpha.map(|v| v.to_string())),
        ("custom_j", a.custom_j.clone()),
        ("doerfler_theta", a.doerfler_theta.map(|v| v.to_string())),
        ("c_pf", a.c_pf.map(|v| v.to_string())),
        ("c_lift", a.c_lift.map(|v| v.to_string())),
        ("dump_dir", a.dump_dir.as_ref().map(path)),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if a.verify {
        cfg.verify = true;
    }
    if a.timing {
        cfg.timing = true;
    }
    if a.c_lift_certified {
        cfg.constants.c_lift_certified = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run(args) = Cli::parse().command;
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let out = match run_study(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let written = match &cfg.out {
        Some(p) => std::fs::File::create(p).map_err(Into::into).and_then(|f| write_csv(&out.rows, f)),
        None => write_csv(&out.rows, std::io::stdout().lock()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    for p in &cfg.degrees {
        let rows: Vec<_> = out.rows.iter().filter(|r| r.p == *p).cloned().collect();
        if rows.len() > 1 {
            let rates: Vec<String> = observed_rates(&rows).iter().map(|r| format!("{r:.2}")).collect();
            log::info!("p={p} observed rates: {}", rates.join(", "));
        }
    }
    if !out.failures.is_empty() {
        for f in &out.failures {
            eprintln!("post-check failed: {f}");
        }
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
