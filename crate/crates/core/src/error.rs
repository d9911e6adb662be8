use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("backward was already run on this recording")]
    TapeConsumed,

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Load-time diagnostics for the `RPTF` container. Each corruption class has
/// its own variant so callers (and tests) can tell them apart.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: expected \"RPTF\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported container version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated header: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: u64, available: u64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: tensor {name} ends at byte {end}, payload has {available}")]
    TruncatedPayload {
        name: String,
        end: u64,
        available: u64,
    },

    #[error("overlapping tensors: {first} and {second} share bytes")]
    Overlap { first: String, second: String },

    #[error("manifest does not cover payload: {0}")]
    Coverage(String),

    #[error("tensor {name}: {detail}")]
    TensorMismatch { name: String, detail: String },
}
