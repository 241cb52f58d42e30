use std::path::PathBuf;

/// Crate-wide error type. Variants map one-to-one onto the CLI's exit
/// codes and the `error[...]` categories printed on stderr, so every
/// fallible API reports through here.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or axis mismatch. The message names the offending axis.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Bad configuration value, unknown config key, or an operator
    /// parameterization that cannot produce a valid output extent.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse, e.g. replaying backward on a spent tape or mixing
    /// variables from different tapes.
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed or inconsistent input data (files, masks, datasets).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// I/O failure, always carrying the path involved.
    #[error("io error: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category tag used by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::Data(_) => "data",
            Error::Numeric(_) => "numeric",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for the CLI. 0 is success, 2 is reserved for
    /// argument parsing (used by clap), the rest are per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Config(_) => 3,
            Error::Io { .. } => 4,
            Error::Data(_) => 5,
            Error::Dimension(_) => 6,
            Error::Numeric(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
