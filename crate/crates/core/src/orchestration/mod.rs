//! Reproducible experiment recipes, run directories and the run registry.

mod config;
mod recipe;
mod registry;
mod runner;

use std::path::Path;

use thiserror::Error;

pub use config::{PipelineConfig, PreprocessSection, ScrapeSection, TrainSection};
pub use recipe::{
    builtin_recipe, builtin_recipes, config_hash, parse_policy, parse_task, ArtifactDescriptor, ExperimentRecipe,
    Operation, Stage, CHECKPOINT, CONFIG, CONFUSION_NORMALIZED, CONFUSION_RAW, EPOCHS, LABELED, PAIRS, REPORT, SCATTER,
    SPLIT,
};
pub use registry::{Registry, RunRegistryEntry, RunStatus, StageFailure, StageTiming, REGISTRY_FILE};
pub use runner::{
    build_split, income_table, poverty_policy, read_split, read_stage_log, run_id, run_recipe, table_entries,
    RunOptions, SampleSplit, SplitSummary, StageRecord, LOCK_FILE, STAGE_LOG,
};

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid recipe {recipe:?}: {message}")]
    InvalidRecipe { recipe: String, message: String },
    #[error("registry {path} is corrupt at line {line}: {message}")]
    Integrity { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("no run named {0:?} in the registry")]
    UnknownRun(String),
    #[error("run {0} is locked by another process")]
    RunLocked(String),
    #[error("stage {stage} failed: {diagnostics}")]
    StageFailed {
        entry: Box<RunRegistryEntry>,
        stage: String,
        diagnostics: String,
    },
    #[error("dataset unavailable: {message}")]
    DataUnavailable {
        entry: Box<RunRegistryEntry>,
        message: String,
    },
}

impl OrchestrationError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        OrchestrationError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Process exit status: 2 for bad input or an unknown run, 3 for a
    /// failed stage, 4 when the dataset is missing or incomplete.
    pub fn exit_code(&self) -> i32 {
        match self {
            OrchestrationError::Config(_)
            | OrchestrationError::InvalidRecipe { .. }
            | OrchestrationError::UnknownRun(_) => 2,
            OrchestrationError::DataUnavailable { .. } => 4,
            _ => 3,
        }
    }
}
