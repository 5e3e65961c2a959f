use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate lattice: Im(tau) = 0")]
    DegenerateLattice,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("flux per cell {found:.6} does not match 2*pi*n = {expected:.6}")]
    FluxMismatch { found: f64, expected: f64 },

    #[error("ill-conditioned theta basis (Gram condition {0:.3e}); increase the truncation or the grid")]
    IllConditioned(f64),

    #[error("periodic Poisson right-hand side has nonzero mean {0:.3e}")]
    NonzeroMean(f64),

    #[error("{0}")]
    OutsideBranch(String),

    #[error("malformed state file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
