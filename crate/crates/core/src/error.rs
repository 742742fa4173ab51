use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: unknown names, invalid configs, out-of-range parameters.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Array or image shapes that do not fit together.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Malformed container or text record.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset, manifest or cache content that cannot be used.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// NaN, infinity or divergence during evaluation or training.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 1,
            Error::Shape(_) | Error::Format(_) | Error::Data(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
