use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor shapes or extents.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Non-finite values or a domain violation (e.g. log of a non-positive value).
    #[error("numeric error: {0}")]
    Numeric(String),
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Invalid model, training or CLI configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed checkpoint or report file.
    #[error("format error: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
}

impl Error {
    /// True for errors caused by bad input or configuration rather than by a
    /// failure at run time. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_) | Error::Contract(_) | Error::Config(_) | Error::Format(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! ensure_dim {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::error::Error::Dimension(format!($($arg)*)));
        }
    };
}

pub(crate) use dim_err;
pub(crate) use ensure_dim;
