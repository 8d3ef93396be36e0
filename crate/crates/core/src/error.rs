use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite sample at node {0}")]
    NonFinite(usize),
    #[error("field is identically zero")]
    ZeroField,
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error("not a minimizer: residual {residual:.3e} after rescaling exceeds {tolerance:.1e}")]
    NonMinimizer { residual: f64, tolerance: f64 },
    #[error("inconsistent sharp constant: {from_mass:.12e} vs {from_quotient:.12e}")]
    InconsistentConstant { from_mass: f64, from_quotient: f64 },
    #[error("resampling out of range: {0}")]
    ResampleOutOfRange(String),
    #[error("time {t} is at or past the blow-up time {blowup_time}")]
    AtOrPastBlowup { t: f64, blowup_time: f64 },
    #[error("singular linear system at row {0}")]
    LinearSolveFailure(usize),
    #[error("initial mass {mass:.12e} is not below the threshold {threshold:.12e}")]
    AboveThreshold { mass: f64, threshold: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("mass mismatch: |{mass:.12e} - {expected:.12e}| exceeds relative tolerance")]
    MassMismatch { mass: f64, expected: f64 },
    #[error("negative energy {0:.3e} at minimal mass")]
    NegativeEnergy(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
