use thiserror::Error;

/// Errors raised anywhere in the lab.
///
/// Variants map onto the failure classes of the command-line exit-code
/// contract: argument and parameter problems are configuration errors,
/// geometry and integration problems are numerical failures.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("domain too short: {0}")]
    DomainTooShort(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("singular point: {0}")]
    SingularPoint(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("insufficient stencil: {0}")]
    InsufficientStencil(String),
    #[error("non-integrable weight: {0}")]
    NonIntegrableWeight(String),
    #[error("constant undefined: {0}")]
    ConstantUndefined(String),
    #[error("inconsistent parameters: {0}")]
    InconsistentParameters(String),
    #[error("closure unsupported: {0}")]
    ClosureUnsupported(String),
    #[error("infeasible parameters: {0}")]
    InfeasibleParameters(String),
    #[error("parameter conflict: {0}")]
    ParameterConflict(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),
    #[error("not minimal: {0}")]
    NotMinimal(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    /// The reader of stdout went away (`| head`).
    #[error("output closed")]
    OutputClosed,
}

impl LabError {
    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            LabError::DegenerateGeometry(_)
                | LabError::InsufficientStencil(_)
                | LabError::SingularPoint(_)
        )
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return LabError::OutputClosed;
        }
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
