use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("value out of range: {0}")]
    Range(String),

    /// A cell in a tabular input could not be interpreted. Rows and columns are 1-based.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    /// A structurally malformed input. `location` is a byte offset for binary
    /// model files and a 1-based row for CSV inputs.
    #[error("format error at {location}: {message}")]
    Format { location: Location, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(usize),
    Row(usize),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Byte(offset) => write!(f, "byte {offset}"),
            Location::Row(row) => write!(f, "row {row}"),
        }
    }
}

impl Error {
    pub(crate) fn format_at_byte(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Byte(offset),
            message: message.into(),
        }
    }

    pub(crate) fn format_at_row(row: usize, message: impl Into<String>) -> Self {
        Error::Format {
            location: Location::Row(row),
            message: message.into(),
        }
    }

    /// Stable category name used in the CLI's `error[<category>]:` prefix.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidData(_) => "data",
            Error::Config(_) => "config",
            Error::Invariant(_) => "invariant",
            Error::Range(_) => "range",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 usage/configuration, 3 data or format, 4 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidData(_) | Error::Parse { .. } | Error::Format { .. } | Error::Io(_) => 3,
            Error::Invariant(_) | Error::Range(_) => 4,
        }
    }
}
