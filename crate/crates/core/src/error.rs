use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum SnsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical fault at neuron {neuron}{}", step_suffix(*.step))]
    NumericalFault { neuron: usize, step: Option<usize> },

    #[error("steady state not reached after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("unknown operation `{0}`")]
    UnknownOp(String),

    #[error("position {value} m on axis {axis} lies outside the workspace [{lo}, {hi}]")]
    OutOfWorkspace {
        axis: char,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("cannot encode device line: {0}")]
    Encode(String),

    #[error("malformed device line at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("episode fault at step {step}: {source}")]
    Episode {
        step: usize,
        #[source]
        source: Box<SnsError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn step_suffix(step: Option<usize>) -> String {
    match step {
        Some(s) => format!(" (step {s})"),
        None => String::new(),
    }
}

impl SnsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SnsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        SnsError::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        SnsError::Csv {
            path: path.into(),
            source,
        }
    }

    /// Attach a simulation step index to a numerical fault.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            SnsError::NumericalFault { neuron, .. } => SnsError::NumericalFault {
                neuron,
                step: Some(step),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, SnsError>;
