use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("K_nu(x) overflows f64 for nu = {nu}, x = {x}")]
    BesselOverflow { nu: f64, x: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("prediction point coincides with design point {0}")]
    CoincidentPoint(usize),

    #[error("chain initialization failed: log target at init is {0}")]
    Initialization(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("replication {rep} at n = {n} failed after {attempts} attempts: {last}")]
    FailureBudget {
        n: usize,
        rep: usize,
        attempts: usize,
        last: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
    }
}
