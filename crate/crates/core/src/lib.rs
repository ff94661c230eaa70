pub mod equilibration;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod geometry;
pub mod mesh;
pub mod quadrature;
pub mod solver;
pub mod linalg;
pub mod spaces;

pub use error::{Error, Result};
