//! Error type shared by every module of the crate.

use thiserror::Error;

/// Broad error classes, used by the command-line front end to pick an exit
/// code and a message prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
    Mismatch,
}

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented range or an invariant of the type
    /// it configures.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A configuration file entry could not be accepted.
    #[error("config line {line}: `{key}`: {msg}")]
    ConfigLine { line: usize, key: String, msg: String },

    #[error("network placement infeasible: {0}")]
    PlacementInfeasible(String),

    /// An input lies outside the validity range of a propagation model.
    #[error("outside model domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Two artifacts (e.g. a model and a dataset) were built for different
    /// system configurations.
    #[error("configuration mismatch: {0}")]
    Mismatch(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("power iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::ConfigLine { .. }
            | Error::PlacementInfeasible(_)
            | Error::Domain(_) => ErrorCategory::Config,
            Error::Io(_) | Error::Csv(_) | Error::CorruptHeader(_) | Error::VersionMismatch { .. } => {
                ErrorCategory::Io
            }
            Error::Divergence { .. } | Error::NonConvergence(_) | Error::Numeric(_) => {
                ErrorCategory::Numeric
            }
            Error::DimensionMismatch(_) | Error::Mismatch(_) => ErrorCategory::Mismatch,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
