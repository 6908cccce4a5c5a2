//! Fetching household photos and metadata into a local dataset.

mod download;
mod fetch;
mod filename;
mod manifest;
mod scrape;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::category::Category;

pub use download::{
    asset_relative_path, download_all, download_asset, sha256_hex, AssetFailure, IMAGES_DIR, QUARANTINE_DIR,
};
pub use fetch::{Fetch, FetchError, RateLimiter, WebFetcher};
pub use filename::{encode_asset_filename, parse_asset_filename, sanitize_country, AssetName, FilenameError};
pub use manifest::{
    build_manifest, AssetRef, DatasetManifest, ManifestHeader, ManifestRow, HEADER_FILE, MANIFEST_FILE, SCHEMA_VERSION,
};
pub use scrape::{parse_family_page, scrape_family_index, FamilyEntry, FamilyIndex};

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "WEALTH_DATA_ROOT";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid scrape configuration: {0}")]
    Config(String),
    #[error("could not fetch the family index (retryable: {retryable}): {source}")]
    Index {
        retryable: bool,
        #[source]
        source: FetchError,
    },
    #[error(transparent)]
    Filename(#[from] FilenameError),
    #[error("assets reference unknown families: {0:?}")]
    OrphanAssets(Vec<String>),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("dataset tree does not match manifest: {0:?}")]
    Incomplete(Vec<String>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Crawl settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrapeConfig {
    pub base_url: String,
    pub categories: Vec<Category>,
    pub max_concurrent: usize,
    pub min_request_interval_ms: u64,
    pub output_root: PathBuf,
    pub resume: bool,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    3
}

/// `$WEALTH_DATA_ROOT`, or `./data` when unset.
pub fn default_data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data"))
}

impl ScrapeConfig {
    pub fn new(base_url: impl Into<String>, output_root: impl Into<PathBuf>) -> Self {
        Self {
            base_url: base_url.into(),
            categories: Category::ALL.to_vec(),
            max_concurrent: 4,
            min_request_interval_ms: 250,
            output_root: output_root.into(),
            resume: true,
            max_retries: default_retries(),
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.categories.is_empty() {
            return Err(IngestError::Config("at least one category is required".into()));
        }
        if self.max_concurrent == 0 {
            return Err(IngestError::Config("max_concurrent must be at least 1".into()));
        }
        self.base_url().map(|_| ())
    }

    /// The base URL with a trailing slash so relative joins stay inside it.
    /// A bare filesystem path is accepted as a local mirror.
    pub fn base_url(&self) -> Result<Url, IngestError> {
        let mut raw = self.base_url.clone();
        if !raw.ends_with('/') {
            raw.push('/');
        }
        match Url::parse(&raw) {
            Ok(u) => Ok(u),
            Err(url::ParseError::RelativeUrlWithoutBase) => {
                let abs =
                    std::path::absolute(Path::new(&self.base_url)).map_err(|e| IngestError::Config(e.to_string()))?;
                Url::from_directory_path(&abs)
                    .map_err(|_| IngestError::Config(format!("bad mirror path {}", abs.display())))
            }
            Err(e) => Err(IngestError::Config(format!("bad base URL {raw:?}: {e}"))),
        }
    }

    pub fn fetcher(&self) -> WebFetcher {
        WebFetcher::new(Duration::from_millis(self.min_request_interval_ms), self.max_retries)
    }
}

/// Household metadata as published by the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdMeta {
    pub family_id: String,
    pub country: String,
    /// USD per adult equivalent per month.
    pub monthly_consumption_usd: f64,
}

/// One stored photo.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawImageAsset {
    pub family_id: String,
    pub category: Category,
    pub remote_url: String,
    /// Relative to the output root.
    pub local_path: PathBuf,
    pub content_hash: String,
    pub byte_size: u64,
}

/// What a crawl produced.
#[derive(Debug)]
pub struct ScrapeSummary {
    pub manifest: DatasetManifest,
    pub families: usize,
    pub countries: usize,
    pub skipped_families: Vec<(String, String)>,
    pub failures: Vec<AssetFailure>,
    pub requests: usize,
}

/// Full crawl: discover families, download assets, write the manifest.
pub fn run_scrape(config: &ScrapeConfig, fetcher: &dyn Fetch) -> Result<ScrapeSummary, IngestError> {
    config.validate()?;
    let previous = if config.resume {
        DatasetManifest::read(&config.output_root.join(MANIFEST_FILE))
            .map(|m| m.assets())
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    let index = scrape_family_index(config, fetcher)?;
    let (assets, failures) = download_all(&index.families, config, fetcher, &previous);
    let metas: Vec<HouseholdMeta> = index.families.iter().map(|f| f.meta.clone()).collect();
    let mut manifest = build_manifest(&assets, &metas, &failures)?;
    manifest.write(&config.output_root)?;
    let countries = metas
        .iter()
        .map(|m| m.country.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    log::info!(
        "scraped {} families in {} countries, {} assets, {} failures",
        metas.len(),
        countries,
        assets.len(),
        failures.len()
    );
    Ok(ScrapeSummary {
        manifest,
        families: metas.len(),
        countries,
        skipped_families: index.skipped,
        failures,
        requests: fetcher.request_count(),
    })
}
