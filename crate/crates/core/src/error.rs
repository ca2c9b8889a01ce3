use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("device {device} is unreachable: downlink rate is zero")]
    UnreachableDevice { device: usize },

    #[error(
        "scheduling graph would have {vertices} vertices, above the cap of {cap}; \
         use the sequential scheduler instead"
    )]
    VertexCap { vertices: u128, cap: usize },

    #[error("grid oracle supports at most 3 devices, got {0}")]
    OracleTooLarge(usize),

    #[error("invalid configuration: `{field}` {reason}")]
    Config { field: String, reason: String },

    #[error("IDX parse error at byte offset {offset}: {reason}")]
    Idx { offset: usize, reason: String },

    #[error("local training diverged in round {round} on device {device}")]
    Diverged { round: usize, device: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
