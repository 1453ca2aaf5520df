use thiserror::Error;

/// Every failure the engine can report. [`Error::code`] gives the stable
/// wire name used in JSON error bodies and stream events.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("prompt is empty after normalization")]
    EmptyPrompt,
    #[error("word {0:?} is not in the scorer vocabulary")]
    UnknownToken(String),
    #[error("no registered model named {0:?}")]
    UnknownModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("objective returned a non-finite loss")]
    InvalidLoss,
    #[error("gradient contains non-finite entries")]
    InvalidGradient,
    #[error("session already has an active edit")]
    Busy,
    #[error("edit has not completed")]
    NotCompleted,
    #[error("edit was already accepted")]
    AlreadyAccepted,
    #[error("edit was cancelled")]
    Cancelled,
    #[error("no such session or edit: {0}")]
    NotFound(String),
    #[error("model does not provide gradients")]
    NotDifferentiable,
    #[error("adapter timed out")]
    AdapterTimeout,
    #[error("adapter protocol violation: {0}")]
    AdapterProtocol(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DIMENSION_MISMATCH",
            Error::EmptyMask => "EMPTY_MASK",
            Error::EmptyPrompt => "EMPTY_PROMPT",
            Error::UnknownToken(_) => "UNKNOWN_TOKEN",
            Error::UnknownModel(_) => "UNKNOWN_MODEL",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::NumericalBreakdown(_) => "NUMERICAL_BREAKDOWN",
            Error::InvalidLoss => "INVALID_LOSS",
            Error::InvalidGradient => "INVALID_GRADIENT",
            Error::Busy => "BUSY",
            Error::NotCompleted => "NOT_COMPLETED",
            Error::AlreadyAccepted => "ALREADY_ACCEPTED",
            Error::Cancelled => "CANCELLED",
            Error::NotFound(_) => "NOT_FOUND",
            Error::NotDifferentiable => "INVALID_CONFIG",
            Error::AdapterTimeout => "ADAPTER_TIMEOUT",
            Error::AdapterProtocol(_) => "ADAPTER_PROTOCOL_ERROR",
            Error::Format(_) => "FORMAT_ERROR",
            Error::Io(_) => "IO_ERROR",
        }
    }

    pub fn dims(what: impl Into<String>) -> Self {
        Error::DimensionMismatch(what.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
