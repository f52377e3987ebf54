use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("root bracketing failed: {0}")]
    RootBracket(String),
    #[error("quadrature did not converge: tail carries {tail_fraction:.3e} of the integral")]
    Quadrature { tail_fraction: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("matrix is singular or not positive definite at row {0}")]
    Singular(usize),
    #[error("constant estimation failed: {0}")]
    Estimation(String),
    #[error("spectral gap is not positive ({0:.6e})")]
    NonPositiveGap(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
