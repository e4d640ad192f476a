use std::path::PathBuf;

/// Error type shared by every module of the crate.
///
/// Each variant maps to a stable category string (see [`Error::category`]) that the
/// command-line front end prints and turns into an exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible tensor shapes or an out-of-range axis.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// An invalid model, experiment or data configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad user-supplied input: labels, ids, images, manifests.
    #[error("input error: {0}")]
    Input(String),
    /// An API contract was broken by the caller.
    #[error("contract error: {0}")]
    Contract(String),
    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    NonFinite(String),
    /// Malformed binary or text container.
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Machine-parseable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "numeric",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Input(_) => 3,
            Error::Dimension(_) => 4,
            Error::Contract(_) => 5,
            Error::NonFinite(_) => 6,
            Error::Format(_) => 7,
            Error::Io { .. } => 8,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! input_err {
    ($($arg:tt)*) => { $crate::error::Error::Input(format!($($arg)*)) };
}
pub(crate) use {config_err, dim_err, input_err};
