use thiserror::Error;

use crate::ingestion::IngestError;
use crate::metrics::MetricError;
use crate::modeling::ModelError;
use crate::orchestration::OrchestrationError;
use crate::preprocess::PreprocessError;
use crate::reporting::ReportError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-wide error; each pipeline module has its own error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Command-line exit status: 2 for invalid input, 3 for a failed
    /// computation, 4 when the dataset is missing or incomplete.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Orchestration(e) => e.exit_code(),
            Error::Ingest(IngestError::Config(_) | IngestError::Filename(_)) => 2,
            Error::Ingest(
                IngestError::Index { .. }
                | IngestError::Incomplete(_)
                | IngestError::Manifest(_)
                | IngestError::Io { .. },
            ) => 4,
            Error::Model(ModelError::Config(_)) => 2,
            Error::Preprocess(
                PreprocessError::Policy(_) | PreprocessError::Mosaic(_) | PreprocessError::IncomeTable(_),
            ) => 2,
            _ => 3,
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
