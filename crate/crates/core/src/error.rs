use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("quadrature did not converge: achieved relative error {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid device: {0}")]
    InvalidDevice(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("linear solver failed: {reason} (relative residual {residual:.3e})")]
    LinearSolver { reason: String, residual: f64 },

    #[error("{method} did not converge after {iterations} iterations (last residual {residual:.3e}, rate estimate {rate:.3})")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
        rate: f64,
    },

    #[error("step rejected: {0}")]
    StepRejected(String),
}
