use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (grids, dimensions, parameter ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Volatility block rejected as singular or too ill-conditioned to invert.
    #[error("volatility matrix on interval {interval} is singular (condition number {condition:e})")]
    SingularVolatility { interval: usize, condition: f64 },

    #[error("grids differ; refine both objects to a common grid first")]
    GridMismatch,

    #[error("time {t} lies outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    /// The closed-form constrained solution needs |z_alpha| >= 2 ||theta||_T.
    #[error("hypothesis |z_alpha| >= 2 ||theta||_T violated: |z_alpha| = {z_abs}, ||theta||_T = {theta_norm}")]
    HypothesisViolated { z_abs: f64, theta_norm: f64 },

    #[error("{name} = {value} outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, domain: impl Into<String>) -> Self {
        Error::Domain {
            name,
            value,
            domain: domain.into(),
        }
    }
}
