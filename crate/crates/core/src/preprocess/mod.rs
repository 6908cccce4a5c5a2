//! From a manifest to labeled, model-ready datasets.

mod dataset;
mod household;
mod income;
mod mosaic;
mod poverty;
mod sampling;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::DatasetManifest;

pub use dataset::{
    category_counts, labeled_rows, read_labeled, samples_for, write_labeled, ImageSample, InputMode, LabeledRow,
    LABELED_FILE,
};
pub use household::{
    compute_adult_equivalents, filter_outliers, records_from_manifest, HouseholdRecord, DEFAULT_OUTLIER_CAP_USD,
};
pub use income::{IncomeGroup, IncomeGroupTable, BUNDLED_TABLE_RELEASE};
pub use mosaic::{build_mosaic, compose_mosaic, mosaic_path, write_mosaics, MosaicSpec, MOSAIC_DIR, WHITE};
pub use poverty::{label_poverty, PolicyMode, PovertyPolicy, DAYS_PER_MONTH, UNIFORM_DAILY_LINE};
pub use sampling::{
    balance_classes, split_assignments, split_dataset, Labeled, SplitAssignment, SplitSpec, StratifyField,
};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown country {country:?}; closest known names: {candidates:?}")]
    UnknownCountry { country: String, candidates: Vec<String> },
    #[error("income group table: {0}")]
    IncomeTable(String),
    #[error("invalid poverty policy: {0}")]
    Policy(String),
    #[error("household {0} has no income group but the policy needs one")]
    MissingIncomeGroup(String),
    #[error("invalid mosaic spec: {0}")]
    Mosaic(String),
    #[error("household {0:?} has no images to build a mosaic from")]
    NoImages(String),
    #[error("cannot read image {path}: {message}")]
    Image { path: String, message: String },
    #[error("record {index} has label {label:?}, expected 0 or 1")]
    Unlabeled { index: usize, label: Option<u8> },
    #[error("both classes must be non-empty (negatives {negatives}, positives {positives})")]
    EmptyClass { negatives: usize, positives: usize },
    #[error("need at least 2 records to split, got {0}")]
    TooFew(usize),
    #[error("invalid split: {0}")]
    Split(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl PreprocessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        PreprocessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub policy: PovertyPolicy,
    pub cap_usd: f64,
    pub seed: u64,
    pub mosaic: MosaicSpec,
    pub write_mosaics: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            policy: PovertyPolicy::uniform(),
            cap_usd: DEFAULT_OUTLIER_CAP_USD,
            seed: 0,
            mosaic: MosaicSpec::default(),
            write_mosaics: true,
        }
    }
}

/// Output of [`prepare`].
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub records: Vec<HouseholdRecord>,
    pub splits: Vec<SplitAssignment>,
    pub households_in: usize,
    pub category_counts: Vec<(InputMode, usize)>,
    pub mosaic_failures: Vec<(String, String)>,
}

/// Runs the household-level steps: income groups, outlier filter, poverty
/// labels, the 80/20 split and (optionally) mosaics under `root`.
pub fn prepare(
    manifest: &DatasetManifest,
    root: &Path,
    table: &IncomeGroupTable,
    options: &PreprocessOptions,
) -> Result<PreparedDataset, PreprocessError> {
    options.policy.validate()?;
    let records = records_from_manifest(manifest, root, table)?;
    let households_in = records.len();
    let mut records = filter_outliers(records, options.cap_usd);
    log::info!(
        "outlier filter at {}: {} -> {} households",
        options.cap_usd,
        households_in,
        records.len()
    );
    for r in &mut records {
        r.poverty_label = Some(options.policy.label(r)?);
    }
    let splits = split_assignments(&records, &SplitSpec::new(options.seed))?;
    let counts = category_counts(&records);
    for (mode, n) in &counts {
        log::info!("{mode}: {n} samples");
    }
    let mut mosaic_failures = Vec::new();
    if options.write_mosaics {
        for (r, res) in records.iter().zip(write_mosaics(&records, &options.mosaic, root)) {
            if let Err(e) = res {
                log::warn!("mosaic for {} failed: {e}", r.family_id);
                mosaic_failures.push((r.family_id.clone(), e.to_string()));
            }
        }
    }
    Ok(PreparedDataset {
        records,
        splits,
        households_in,
        category_counts: counts,
        mosaic_failures,
    })
}
