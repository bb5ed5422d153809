use thiserror::Error;

/// Coarse classification used by front ends to map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The input violates a documented precondition or could not be read.
    Validation,
    /// The input was well formed but the numerics failed or produced an
    /// unphysical answer.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("attenuation-unknown: {0} Hz is outside the attenuation table")]
    AttenuationUnknown(f64),

    #[error("insufficient-power-range: {0}")]
    InsufficientPowerRange(String),

    #[error("degenerate-circle: points are (nearly) collinear")]
    DegenerateCircle,

    #[error("no resonance signature: {0}")]
    NoResonance(String),

    #[error("non-convergence in {stage}: {detail} (residual sum of squares {residual:e})")]
    NonConvergence {
        stage: &'static str,
        detail: String,
        residual: f64,
    },

    #[error("invalid-asymmetry: |phi| = {0} rad is not below pi/2")]
    InvalidAsymmetry(f64),

    #[error("nonphysical-internal-loss: 1/Q_L = {inv_ql:e} <= cos(phi)/|Q_c| = {coupling:e}")]
    NonphysicalInternalLoss { inv_ql: f64, coupling: f64 },

    #[error("unidentifiable-channels: collinear columns [{}]", .0.join(", "))]
    UnidentifiableChannels(Vec<String>),

    #[error("no-loss-model: mode {0} has zero total loss")]
    NoLossModel(String),

    #[error("nonphysical: {0}")]
    Nonphysical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch(_)
            | Error::MissingChannel(_)
            | Error::AttenuationUnknown(_)
            | Error::InsufficientPowerRange(_)
            | Error::Io(_)
            | Error::Parse(_) => ErrorClass::Validation,
            Error::DegenerateCircle
            | Error::NoResonance(_)
            | Error::NonConvergence { .. }
            | Error::InvalidAsymmetry(_)
            | Error::NonphysicalInternalLoss { .. }
            | Error::UnidentifiableChannels(_)
            | Error::NoLossModel(_)
            | Error::Nonphysical(_) => ErrorClass::Numerical,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
