use hairmatte_core::Error;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Io(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                Error::InvalidSpec(_) | Error::InvalidArgument { .. } => EXIT_USAGE,
                Error::Divergence { .. } | Error::Graph(_) => EXIT_NUMERIC,
                Error::Dimension { .. } | Error::Checkpoint(_) | Error::Image(_) | Error::Dataset(_) | Error::Io(_) => {
                    EXIT_DATA
                }
            },
        }
    }
}
