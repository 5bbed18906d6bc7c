use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("row {row}: {kind} observation not admitted by scheme {scheme}")]
    SchemeViolation {
        row: usize,
        kind: String,
        scheme: String,
    },

    #[error("row {row}: negative time {value}")]
    NegativeTime { row: usize, value: f64 },

    #[error("invalid observation: {0}")]
    InvalidObservation(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("distribution has no finite support")]
    EmptyDistribution,

    #[error("observation {index} has zero probability under the distribution")]
    DegenerateDatum { index: usize },

    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },

    #[error("parameter outside model domain: {0}")]
    Domain(String),

    #[error("exp overflow: argument {0} exceeds limit")]
    Overflow(f64),

    #[error("no sign change of the estimating equation found within the expansion budget")]
    NoBracket,

    #[error("Hessian is singular or not positive definite")]
    SingularHessian,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate resample: {0}")]
    DegenerateResample(String),

    #[error("rejection envelope is unbounded: {0}")]
    EnvelopeUnbounded(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Stable error name used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::SchemeViolation { .. } => "SchemeViolation",
            Error::NegativeTime { .. } => "NegativeTime",
            Error::InvalidObservation(_) => "InvalidObservation",
            Error::EmptySample => "EmptySample",
            Error::EmptyDistribution => "EmptyDistribution",
            Error::DegenerateDatum { .. } => "DegenerateDatum",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::Domain(_) => "DomainError",
            Error::Overflow(_) => "Overflow",
            Error::NoBracket => "NoBracket",
            Error::SingularHessian => "SingularHessian",
            Error::Infeasible(_) => "Infeasible",
            Error::DegenerateResample(_) => "DegenerateResample",
            Error::EnvelopeUnbounded(_) => "EnvelopeUnbounded",
            Error::Param(_) => "ParamError",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
