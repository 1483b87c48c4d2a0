//! Crate-wide error type. Variants map onto the CLI exit classes:
//! Config -> 2, Shape/Numeric -> 3, Data/Io -> 4.

use std::fmt;

#[derive(Debug, Clone)]
pub enum GnfError {
    /// Dimension or structural mismatch between tensors/graphs.
    Shape(String),
    /// Numerical-range failure (overflow, non-finite values, domain errors).
    Numeric(String),
    /// Bad run configuration (unknown key, unparsable value, invalid setting).
    Config(String),
    /// Malformed input data (edge lists, checkpoints, manifests).
    Data(String),
    /// Filesystem failure.
    Io(String),
}

pub type Result<T> = std::result::Result<T, GnfError>;

impl fmt::Display for GnfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GnfError::Shape(m) => write!(f, "shape error: {m}"),
            GnfError::Numeric(m) => write!(f, "numerical failure: {m}"),
            GnfError::Config(m) => write!(f, "config error: {m}"),
            GnfError::Data(m) => write!(f, "data error: {m}"),
            GnfError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for GnfError {}

impl GnfError {
    pub fn exit_code(&self) -> i32 {
        match self {
            GnfError::Config(_) => 2,
            GnfError::Shape(_) | GnfError::Numeric(_) => 3,
            GnfError::Data(_) | GnfError::Io(_) => 4,
        }
    }

    /// Failure class string aligned with the exit codes.
    pub fn class(&self) -> &'static str {
        match self {
            GnfError::Config(_) => "config",
            GnfError::Shape(_) | GnfError::Numeric(_) => "numerical",
            GnfError::Data(_) | GnfError::Io(_) => "io",
        }
    }
}

/// Attach a path to a raw I/O error.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> GnfError {
    GnfError::Io(format!("{}: {e}", path.display()))
}

/// Write a text file, creating parent directories as needed.
pub fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
