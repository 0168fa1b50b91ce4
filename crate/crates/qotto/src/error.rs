use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("operator is not Hermitian (max |H - H^dag| = {0:.3e})")]
    NonHermitian(f64),

    #[error("Fock cutoff n_max = {n_max} too small: top-level population {pop:.3e}")]
    Cutoff { n_max: usize, pop: f64 },

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("numerics: {0}")]
    Numerics(String),

    #[error("steady cycle not reached after {cycles} cycles; distances {distances:?}")]
    NoSteadyCycle { cycles: usize, distances: Vec<f64> },

    #[error("quadrature did not converge: estimate {estimate:.6e}, error bound {error:.3e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("truncation breach at chain site {site}: top-level population {pop:.3e}")]
    Truncation { site: usize, pop: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
