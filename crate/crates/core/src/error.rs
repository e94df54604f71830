use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("configuration document could not be parsed: {0}")]
    ConfigParse(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    /// A correlation matrix has an eigenvalue below the PSD tolerance.
    #[error("correlation matrix is not PSD (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Two points coincide where a direction between them is required.
    #[error("coincident points {i} and {j}: direction undefined")]
    SingularDirection { i: usize, j: usize },

    #[error("Sylvester system is near-singular (eigenvalue sum {sum:e})")]
    NearSingular { sum: f64 },

    #[error("solver precondition violated: {0}")]
    Precondition(String),

    #[error("subproblem `{stage}` failed: {reason}")]
    Subproblem { stage: &'static str, reason: String },

    #[error("zero-forcing infeasible: {0}")]
    ZfInfeasible(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigParse(_))
    }
}
