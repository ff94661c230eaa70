use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("infeasible constraints: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Infeasible { residual: f64, tolerance: f64 },
    #[error("patch orthogonality violated at vertex {vertex}: residual {residual:.3e}")]
    PatchOrthogonality { vertex: usize, residual: f64 },
    #[error("compatibility violated on element {element}, vertex {vertex}: {value:.3e}")]
    Compatibility { element: usize, vertex: usize, value: f64 },
    #[error("post-check failed: {0}")]
    PostCheck(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
