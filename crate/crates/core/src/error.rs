use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum HycasError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar tensor, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("invalid model state: {0}")]
    InvalidModel(String),

    #[error("audit violation in {component}: {detail}")]
    AuditViolation { component: String, detail: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HycasError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(HycasError::Shape { op, detail: detail.into() })
}
