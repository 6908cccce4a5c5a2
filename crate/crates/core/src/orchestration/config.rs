//! The global configuration file (TOML). Every key is optional.
//!
//! ```toml
//! data_root = "/data/wealth"
//! seed = 7
//!
//! [scrape]
//! base_url = "https://example.org/dollar-street/"
//! min_request_interval_ms = 1000
//!
//! [preprocess]
//! cap_usd = 5000.0
//! tile_px = 224
//!
//! [train]
//! epochs = 30
//! backbone_id = "resnet-mini"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::ingestion::{default_data_root, ScrapeConfig};
use crate::metrics::DEFAULT_BETA;
use crate::modeling::DEFAULT_BACKBONE;
use crate::preprocess::{DEFAULT_OUTLIER_CAP_USD, UNIFORM_DAILY_LINE};

use super::OrchestrationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrapeSection {
    pub base_url: Option<String>,
    pub categories: Vec<Category>,
    pub max_concurrent: usize,
    pub min_request_interval_ms: u64,
    pub max_retries: u32,
    pub resume: bool,
}

impl Default for ScrapeSection {
    fn default() -> Self {
        Self {
            base_url: None,
            categories: Category::ALL.to_vec(),
            max_concurrent: 4,
            min_request_interval_ms: 1000,
            max_retries: 3,
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub cap_usd: f64,
    pub tile_px: u32,
    pub uniform_daily_line_usd: f64,
    /// Replaces the bundled `country,group` table.
    pub income_table: Option<PathBuf>,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self {
            cap_usd: DEFAULT_OUTLIER_CAP_USD,
            tile_px: 224,
            uniform_daily_line_usd: UNIFORM_DAILY_LINE,
            income_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub backbone_id: String,
    pub pretrained: Option<PathBuf>,
    pub input_px: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            backbone_id: DEFAULT_BACKBONE.to_string(),
            pretrained: None,
            input_px: 224,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Falls back to `$WEALTH_DATA_ROOT`, then `./data`.
    pub data_root: Option<PathBuf>,
    pub seed: u64,
    pub scrape: ScrapeSection,
    pub preprocess: PreprocessSection,
    pub train: TrainSection,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, OrchestrationError> {
        let config: Self = toml::from_str(text).map_err(|e| OrchestrationError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, OrchestrationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| OrchestrationError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            OrchestrationError::Config(m) => OrchestrationError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), OrchestrationError> {
        let bad = |m: &str| Err(OrchestrationError::Config(m.to_string()));
        if !(self.preprocess.cap_usd.is_finite() && self.preprocess.cap_usd > 0.0) {
            return bad("preprocess.cap_usd must be positive");
        }
        if self.preprocess.tile_px == 0 {
            return bad("preprocess.tile_px must be positive");
        }
        if !(self.preprocess.uniform_daily_line_usd.is_finite() && self.preprocess.uniform_daily_line_usd > 0.0) {
            return bad("preprocess.uniform_daily_line_usd must be positive");
        }
        if !(self.train.beta.is_finite() && self.train.beta > 0.0) {
            return bad("train.beta must be positive");
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_root.clone().unwrap_or_else(default_data_root)
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_root().join("runs")
    }

    pub fn scrape_config(&self) -> Result<ScrapeConfig, OrchestrationError> {
        let base = self
            .scrape
            .base_url
            .clone()
            .ok_or_else(|| OrchestrationError::Config("scrape.base_url is not set".into()))?;
        let mut c = ScrapeConfig::new(base, self.data_root());
        c.categories = self.scrape.categories.clone();
        c.max_concurrent = self.scrape.max_concurrent;
        c.min_request_interval_ms = self.scrape.min_request_interval_ms;
        c.max_retries = self.scrape.max_retries;
        c.resume = self.scrape.resume;
        Ok(c)
    }
}
