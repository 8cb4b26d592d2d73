use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate polynomial: {0}")]
    DegeneratePolynomial(&'static str),

    #[error("root finder did not converge after {iterations} iterations (max backward error {max_residual:.3e})")]
    RootsNotConverged {
        iterations: usize,
        max_residual: f64,
        partial: Vec<(f64, f64)>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance not PD")]
    CovarianceNotPd,

    #[error("rank-deficient regressor matrix (condition estimate {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("simulation overflow at sample {step}")]
    Overflow { step: usize },

    #[error("objective is non-finite at every evaluated point")]
    NonFiniteObjective,

    #[error("SDP solver did not converge after {iterations} Newton steps (gap {gap:.3e}, min eig {min_eig:.3e})")]
    SdpNotConverged {
        iterations: usize,
        gap: f64,
        min_eig: f64,
    },

    #[error("recovered matrix is singular (condition number {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("penalty stabilization failed after {iterations} outer iterations (spectral radius {rho:.6})")]
    PenaltyStabilizationFailed { iterations: usize, rho: f64 },

    #[error("stable region unreachable after {attempts} proposal draws")]
    StableRegionUnreachable { attempts: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// True for errors caused by bad input files or arguments, as opposed to
    /// numerical breakdowns.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Json(_) | Error::Config(_) | Error::Io(_)
        )
    }
}
