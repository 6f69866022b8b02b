use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed config {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read corpus {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("failed to write corpus: {0}")]
    Write(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("product set is empty")]
    NoProducts,
    #[error("time window is empty: from {from} is not before to {to}")]
    EmptyWindow { from: String, to: String },
    #[error("schedule interval must be positive")]
    NonPositiveInterval,
}

/// Raised while talking to or decoding from a review system. Always surfaces
/// as a `BACKEND_ERROR` anomaly, never as a job failure.
#[derive(Debug, Error)]
pub enum ScmError {
    #[error("empty response body")]
    EmptyBody,
    #[error("unparseable response: {0}")]
    Parse(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("fixture {path}: {detail}")]
    Fixture { path: PathBuf, detail: String },
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("cross tabulation needs two distinct dimensions, got {0} twice")]
    SameDimension(crate::domain::Dimension),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Query(#[from] QueryError),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("snapshot `{0}` not found")]
    SnapshotNotFound(String),
    #[error("job `{0}` not found")]
    JobNotFound(String),
    #[error("store i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt snapshot {path}: {source}")]
    Corrupt {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
#[error("invalid generator spec: {0}")]
pub struct ForgeError(pub String);

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}
