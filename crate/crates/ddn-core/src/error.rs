//! Crate-wide error type.
//!
//! Recoverable failures (bad files, dimension mismatches, divergent
//! training) are reported through [`Error`]. Violations of internal API
//! contracts — mismatched slice lengths handed to numeric kernels, indices
//! out of range — are programmer errors and panic via `assert!` instead.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed text input; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Inputs that are well-formed but inconsistent (duplicate ids, label
    /// values outside {0,1}, missing required options, ...).
    #[error("{0}")]
    Validation(String),

    /// Shapes that do not line up (model dims vs. data dims, prediction
    /// rows vs. truth rows).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Archive carries a format version this build does not understand.
    #[error("unsupported archive format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged: {0}")]
    Divergence(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
