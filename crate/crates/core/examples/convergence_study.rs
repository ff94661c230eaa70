//! Uniform refinement study written as CSV to stdout.

use curl_equilib::experiments::{observed_rates, run_study, write_csv, ExperimentConfig};

fn main() -> curl_equilib::Result<()> {
    let cfg = ExperimentConfig::parse("case = const_j\ndegrees = 1\nmesh_n = 1,2\nseries_terms = 100\n")?;
    let out = run_study(&cfg)?;
    write_csv(&out.rows, std::io::stdout().lock())?;
    eprintln!("observed rate: {:.3?}", observed_rates(&out.rows));
    Ok(())
}
