use thiserror::Error;

/// Unified error type for the core crate.
///
/// `Config` and `Data` describe problems with inputs that a caller could have
/// validated up front; everything else is a failure during execution.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes fed to a tensor op do not match its contract.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a documented precondition.
    #[error("data error: {0}")]
    Data(String),

    /// A binary or text artifact is malformed. `offset` is the byte (or line)
    /// position where decoding failed.
    #[error("format error at offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    /// Geometry too degenerate to invert (zero-length bone, zero quaternion).
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    /// True when the error describes bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Data(_) | Error::Shape { .. })
    }
}
