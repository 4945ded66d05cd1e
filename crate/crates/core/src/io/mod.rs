//! File formats, query synthesis, model export and run configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod cloud;
pub mod config;
pub mod export;
pub mod query;

pub use cloud::{read_cloud, write_cloud, CloudFormat};
pub use config::{GenerateConfig, RunConfig, SweepConfig};
pub use export::{export_model, ExportStats};
pub use query::{synthesize_query, NoiseSpec};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("header declares {declared} vertices but {found} rows follow")]
    CountMismatch { declared: usize, found: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grammar(#[from] crate::grammar::GrammarError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Serializes rows with a header to CSV bytes.
pub fn csv_bytes<S: serde::Serialize>(rows: &[S]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| IoError::Config(e.to_string()))
}

pub const TRACE_HEADER: [&str; 8] = [
    "iter",
    "seconds",
    "chain",
    "temperature",
    "level_reached",
    "log_likelihood",
    "accepted",
    "best_log_post",
];

/// Trace rows as CSV; the header is written even for an empty trace.
pub fn trace_csv(trace: &[crate::engine::TraceRecord]) -> Result<Vec<u8>, IoError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| IoError::Config(e.to_string()))
}
