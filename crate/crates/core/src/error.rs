use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph is empty")]
    EmptyGraph,

    #[error("graph is disconnected ({reached} of {total} nodes reachable)")]
    Disconnected { reached: usize, total: usize },

    #[error("ground-truth orientations are required but missing for node {0}")]
    MissingGroundTruth(usize),

    #[error("degenerate quaternion: norm {norm:e} below {min:e}")]
    DegenerateQuaternion { norm: f64, min: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("rotation matrix rejected: {0}")]
    InvalidRotation(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("every edge was classified as an outlier; cleaned graph is empty")]
    EmptyCleanedGraph,

    #[error("ground truth is not referenced at node {root}: its orientation is {angle_deg:.3e} deg from identity")]
    ReferenceMismatch { root: usize, angle_deg: f64 },

    #[error("non-finite loss at epoch {epoch}, graph {graph}")]
    NonFiniteLoss { epoch: usize, graph: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used to pick a process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed, inconsistent or missing input data.
    Data,
    /// A numeric procedure failed (non-convergence, NaN, degeneracy).
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DegenerateQuaternion { .. }
            | Error::CgNotConverged { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Tape(_)
            | Error::MissingGradient(_) => ErrorClass::Numeric,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline stage it came from.
    pub fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
