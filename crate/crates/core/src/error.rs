use thiserror::Error;

pub type Result<T> = std::result::Result<T, GpnError>;

#[derive(Debug, Error)]
pub enum GpnError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("token {token} out of range for vocab {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("checkpoint: version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint: truncated tensors ({0})")]
    TruncatedTensors(String),
    #[error("checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("plot: {0}")]
    Plot(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl GpnError {
    /// Stable short identifier for harnesses and logs.
    pub fn code(&self) -> &'static str {
        match self {
            GpnError::Config(_) => "config",
            GpnError::TokenOutOfRange { .. } => "token_out_of_range",
            GpnError::Shape(_) => "shape",
            GpnError::NonFinite(_) => "non_finite",
            GpnError::Corpus(_) => "corpus",
            GpnError::BadMagic(_) => "bad_magic",
            GpnError::VersionMismatch { .. } => "version_mismatch",
            GpnError::TruncatedTensors(_) => "truncated_tensors",
            GpnError::CheckpointFormat(_) => "checkpoint_format",
            GpnError::Plot(_) => "plot",
            GpnError::Usage(_) => "usage",
            GpnError::Io(_) => "io",
            GpnError::Json(_) => "json",
        }
    }

    /// Process exit code: 2 usage, 3 I/O or format, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            GpnError::Usage(_) | GpnError::Config(_) => 2,
            GpnError::NonFinite(_) => 4,
            _ => 3,
        }
    }
}
