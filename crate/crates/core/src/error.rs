use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate tetrahedron {tet} (signed volume {volume:e})")]
    DegenerateTet { tet: usize, volume: f64 },

    #[error("mesh is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("eigensolver did not converge: max residual {max_residual:e} after {iterations} iterations")]
    EigenNonConvergence { max_residual: f64, iterations: usize },

    #[error("factorization failed: zero pivot at row {row}")]
    Factorization { row: usize },

    #[error("matrix exponential overflow: norm {norm:e}")]
    ExpOverflow { norm: f64 },

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, msg: msg.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::EigenNonConvergence { .. }
                | Error::Factorization { .. }
                | Error::ExpOverflow { .. }
                | Error::NonFinite(_)
        )
    }
}
