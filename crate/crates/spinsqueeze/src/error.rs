//! Error type shared by every module.
//!
//! Each variant carries the offending numbers so callers can report failures
//! without re-deriving them; `category` gives a stable machine-readable tag
//! used by the CLI, and `exit_code` groups categories into process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spin must satisfy 2J >= 1, got 2J = {two_j}")]
    InvalidSpin { two_j: u32 },

    #[error("Hilbert-space dimension {dim} exceeds the configured maximum {max}")]
    DimensionOverflow { dim: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian: max |A - A^dag| = {deviation:.3e} exceeds {tolerance:.1e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("trace deviates from one by {deviation:.3e} (tolerance {tolerance:.1e})")]
    TraceNotOne { deviation: f64, tolerance: f64 },

    #[error(
        "state lost positivity at Mt = {t:.6}: min eigenvalue {min_eigenvalue:.3e} \
         is below -{tolerance:.1e}; reduce dt, or t_end if a state-dependent gain is running away"
    )]
    PositivityViolation {
        t: f64,
        min_eigenvalue: f64,
        tolerance: f64,
    },

    #[error(
        "state became non-finite at Mt = {t:.6}; reduce dt, or t_end if a \
         state-dependent gain is running away"
    )]
    NonFinite { t: f64 },

    #[error(
        "feedback gain singular at Mt = {t:.6}: <Jx> = {jx:.3e} has fallen to or below \
         the threshold {threshold:.3e}; the schedule is past its usable window, reduce t_end"
    )]
    GainSingularity { t: f64, jx: f64, threshold: f64 },

    #[error("gain schedule not usable here: {reason}")]
    UnsupportedGain { reason: String },

    #[error(
        "gain table query at t = {t:.6} lies outside the tabulated domain [{t_min:.6}, {t_max:.6}]"
    )]
    TableDomain { t: f64, t_min: f64, t_max: f64 },

    #[error("gain table malformed: {reason}")]
    TableFormat { reason: String },

    #[error(
        "squeezing reference plane degenerate: <J_n2>^2 + <J_n3>^2 = {denominator:.3e} \
         is at or below {tolerance:.3e}"
    )]
    DegenerateDirection { denominator: f64, tolerance: f64 },

    #[error(
        "direction frame is not orthonormal: max deviation {deviation:.3e} exceeds {tolerance:.1e}"
    )]
    NotOrthonormal { deviation: f64, tolerance: f64 },

    #[error(
        "curve minimum sits on the {end} boundary of the sampled window; extend the time grid"
    )]
    MinimumAtBoundary { end: &'static str },

    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("invalid time grid: {reason}")]
    InvalidGrid { reason: String },

    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },

    #[error("no trajectories to average")]
    EmptyEnsemble,

    #[error("config: {reason}")]
    Config { reason: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable tag, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidSpin { .. } => "invalid-spin",
            Error::DimensionOverflow { .. } => "dimension-overflow",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::NotHermitian { .. } => "not-hermitian",
            Error::TraceNotOne { .. } => "trace-not-one",
            Error::PositivityViolation { .. } => "positivity-violation",
            Error::NonFinite { .. } => "non-finite",
            Error::GainSingularity { .. } => "gain-singularity",
            Error::UnsupportedGain { .. } => "unsupported-gain",
            Error::TableDomain { .. } => "table-domain",
            Error::TableFormat { .. } => "table-format",
            Error::DegenerateDirection { .. } => "degenerate-direction",
            Error::NotOrthonormal { .. } => "not-orthonormal",
            Error::MinimumAtBoundary { .. } => "minimum-at-boundary",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::InvalidGrid { .. } => "invalid-grid",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::EmptyEnsemble => "empty-ensemble",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for the CLI: 2 = bad input, 3 = i/o, 4 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidSpin { .. }
            | Error::InvalidParameter { .. }
            | Error::InvalidGrid { .. }
            | Error::UnsupportedGain { .. }
            | Error::TableFormat { .. } => 2,
            Error::Io(_) => 3,
            _ => 4,
        }
    }
}
