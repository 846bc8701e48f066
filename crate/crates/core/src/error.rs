use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("probability out of [0, 1]: {what} = {value}")]
    ProbabilityRange { what: String, value: f64 },

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("invalid provenance for query {query}: {reason}")]
    Provenance { query: u32, reason: String },

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("invalid panoptic map: {0}")]
    PanopticMap(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("assignment requires rows >= cols, got {rows} x {cols}")]
    Infeasible { rows: usize, cols: usize },

    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },

    #[error("location mode mismatch: {0}")]
    LocationMode(String),

    #[error("invalid category index {index} for {classes} classes")]
    CategoryIndex { index: usize, classes: usize },

    #[error("expected {expected} supervised layers, got {got}")]
    LayerCount { expected: usize, got: usize },

    #[error("degenerate scene geometry: {0}")]
    Geometry(String),

    #[error("oracle limit exceeded: {0}")]
    OracleLimit(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

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
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format { path: path.into(), message: message.into() }
    }
}
