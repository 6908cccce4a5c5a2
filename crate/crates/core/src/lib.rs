//! Predicting household consumption and extreme poverty from photographs of
//! wealth-related objects.
//!
//! The crate is organised as a pipeline:
//!
//! - [`ingestion`] fetches household images and metadata from a
//!   Dollar-Street-like source and records them in a [`DatasetManifest`].
//! - [`preprocess`] turns the manifest into labeled records, mosaics,
//!   balanced samples and train/validation splits.
//! - [`modeling`] trains small residual CNNs for log-consumption regression
//!   and extreme-poverty classification.
//! - [`metrics`] holds the pure metric computations.
//! - [`reporting`] renders scatter plots, confusion heatmaps and summary tables.
//! - [`orchestration`] wires the stages into reproducible experiment recipes
//!   with a run registry.

pub mod category;
pub mod error;
pub mod ingestion;
pub mod metrics;
pub mod modeling;
pub mod orchestration;
pub mod preprocess;
pub mod reporting;
pub mod synthetic;

pub use category::Category;
pub use error::{Error, Result};
pub use ingestion::{DatasetManifest, HouseholdMeta, RawImageAsset, ScrapeConfig};
pub use metrics::{ConfusionMatrix, MetricsReport, RegressionPairs, Task};

pub use modeling::{EpochLog, InputMode, ModelCheckpoint, TrainConfig};
pub use preprocess::{HouseholdRecord, IncomeGroup, IncomeGroupTable, MosaicSpec, PovertyPolicy, SplitSpec};
