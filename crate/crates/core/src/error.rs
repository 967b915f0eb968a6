use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} is outside a vocabulary of size {size}")]
    UnknownToken { id: u32, size: usize },

    #[error("{name} = {value} is out of range ({expected})")]
    OutOfRange {
        name: &'static str,
        value: String,
        expected: &'static str,
    },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("depth {0} is missing from the per-depth acceptance profile")]
    MissingDepth(usize),

    #[error("correlation is undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("no input: {0}")]
    Empty(&'static str),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn out_of_range(
        name: &'static str,
        value: impl ToString,
        expected: &'static str,
    ) -> Self {
        Error::OutOfRange {
            name,
            value: value.to_string(),
            expected,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the input data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
