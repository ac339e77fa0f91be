use thiserror::Error;

#[derive(Debug, Error)]
pub enum GsmError {
    /// Extents disagree; `axis` names the offending axis.
    #[error("shape mismatch on {axis}: {detail}")]
    Shape { axis: String, detail: String },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error at byte offset {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GsmError {
    pub(crate) fn shape(axis: impl Into<String>, detail: impl Into<String>) -> Self {
        GsmError::Shape {
            axis: axis.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        GsmError::Format {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn parse(line: usize, detail: impl Into<String>) -> Self {
        GsmError::Parse {
            line,
            detail: detail.into(),
        }
    }

    /// True for errors caused by invalid user input rather than I/O or numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            GsmError::Shape { .. }
                | GsmError::Geometry(_)
                | GsmError::InvalidArgument(_)
                | GsmError::Format { .. }
                | GsmError::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, GsmError>;
