use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on {axis} axis (expected {expected}, got {got})")]
    Dimension { op: &'static str, axis: &'static str, expected: usize, got: usize },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("autograd: {0}")]
    Graph(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {value}")]
    Divergence { epoch: usize, batch: usize, value: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Image(#[from] ImageError),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { op, axis, expected, got }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated checkpoint")]
    Truncated,
    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint holds parameter {found:?} where the model expects {expected:?}")]
    ParamMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl CheckpointError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::BadMagic(_) => 1,
            CheckpointError::UnsupportedVersion { .. } => 2,
            CheckpointError::Truncated => 3,
            CheckpointError::ShapeMismatch { .. } => 4,
            CheckpointError::ParamMismatch { .. } => 5,
            CheckpointError::Malformed(_) => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format (magic {0:?})")]
    UnsupportedFormat(Vec<u8>),
    #[error("truncated image data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("image codec: {0}")]
    Codec(String),
}
