//! Error type shared across the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, GnanError>;

/// All failure modes surfaced by the library.
///
/// Variants are grouped by who is at fault: `Config` means the caller asked
/// for something inconsistent, `Parse`/`Schema`/`Validation` mean the input
/// data is malformed, `Numeric`/`UndefinedMetric` mean a computation could
/// not produce a meaningful value, and `Contract` means an internal
/// invariant was violated (always a bug).
#[derive(Debug, thiserror::Error)]
pub enum GnanError {
    /// Invalid option combination or out-of-range hyperparameter.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be decoded at all (bad JSON, bad CSV row, ...).
    #[error("parse error in {file}{}: {message}", fmt_location(.location))]
    Parse {
        file: PathBuf,
        /// Line or record index when the underlying reader knows it.
        location: Option<String>,
        message: String,
    },

    /// The file decoded but its shape is wrong (ragged features, label
    /// count mismatch, node id out of range, ...).
    #[error("schema error in {file}: {message}")]
    Schema { file: PathBuf, message: String },

    /// An in-memory structure fails a consistency check.
    #[error("validation error: {0}")]
    Validation(String),

    /// NaN or infinity reached a place that requires finite values.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A metric has no defined value on the given data, e.g. ROC-AUC when
    /// only one class is present.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Internal invariant broken; indicates a bug in this crate.
    #[error("internal contract violated: {0}")]
    Contract(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn fmt_location(location: &Option<String>) -> String {
    match location {
        Some(loc) => format!(" ({loc})"),
        None => String::new(),
    }
}

impl GnanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GnanError::Io { path: path.into(), source }
    }

    pub fn parse(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        GnanError::Parse { file: file.into(), location: None, message: message.into() }
    }

    pub fn parse_at(
        file: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        GnanError::Parse {
            file: file.into(),
            location: Some(location.into()),
            message: message.into(),
        }
    }

    pub fn schema(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        GnanError::Schema { file: file.into(), message: message.into() }
    }

    /// Process exit code the CLI maps this error to.
    ///
    /// 1 = usage/config, 2 = data, 3 = numeric trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            GnanError::Config(_) => 1,
            GnanError::Parse { .. }
            | GnanError::Schema { .. }
            | GnanError::Validation(_)
            | GnanError::Io { .. } => 2,
            GnanError::Numeric(_) | GnanError::UndefinedMetric(_) | GnanError::Contract(_) => 3,
        }
    }
}
