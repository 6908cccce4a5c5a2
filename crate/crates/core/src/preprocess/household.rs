use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::ingestion::DatasetManifest;

use super::{IncomeGroup, IncomeGroupTable, PreprocessError};

/// Monthly consumption above this is treated as an outlier.
pub const DEFAULT_OUTLIER_CAP_USD: f64 = 5000.0;

/// OECD-modified equivalence scale: 1 for the head, 0.5 for each further
/// adult, 0.3 for each child under 14.
pub fn compute_adult_equivalents(n_adults: u32, n_children_under_14: u32) -> Result<f64, PreprocessError> {
    if n_adults == 0 {
        return Err(PreprocessError::Domain("a household needs at least one adult".into()));
    }
    Ok(1.0 + 0.5 * f64::from(n_adults - 1) + 0.3 * f64::from(n_children_under_14))
}

/// One household, ready for labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdRecord {
    pub family_id: String,
    pub country: String,
    pub income_group: Option<IncomeGroup>,
    pub monthly_consumption_usd: f64,
    /// Natural log of `monthly_consumption_usd`.
    pub log_consumption: f64,
    /// Resolved image path per category, `None` when absent.
    pub images: BTreeMap<Category, Option<PathBuf>>,
    pub poverty_label: Option<u8>,
}

impl HouseholdRecord {
    pub fn new(
        family_id: impl Into<String>,
        country: impl Into<String>,
        income_group: Option<IncomeGroup>,
        monthly_consumption_usd: f64,
    ) -> Result<Self, PreprocessError> {
        if !(monthly_consumption_usd.is_finite() && monthly_consumption_usd > 0.0) {
            return Err(PreprocessError::Domain(format!(
                "consumption must be positive, got {monthly_consumption_usd}"
            )));
        }
        Ok(Self {
            family_id: family_id.into(),
            country: country.into(),
            income_group,
            monthly_consumption_usd,
            log_consumption: monthly_consumption_usd.ln(),
            images: Category::ALL.iter().map(|c| (*c, None)).collect(),
            poverty_label: None,
        })
    }

    pub fn image(&self, category: Category) -> Option<&Path> {
        self.images.get(&category).and_then(|p| p.as_deref())
    }

    pub fn present_categories(&self) -> impl Iterator<Item = Category> + '_ {
        Category::ALL.into_iter().filter(|c| self.image(*c).is_some())
    }
}

/// Builds records from a manifest, resolving image paths against `root`
/// and looking up each country's income group.
pub fn records_from_manifest(
    manifest: &DatasetManifest,
    root: &Path,
    table: &IncomeGroupTable,
) -> Result<Vec<HouseholdRecord>, PreprocessError> {
    manifest
        .rows
        .iter()
        .map(|row| {
            let group = table.assign_income_group(&row.country)?;
            let mut rec = HouseholdRecord::new(&row.family_id, &row.country, Some(group), row.monthly_consumption_usd)?;
            for (c, a) in row.present() {
                rec.images.insert(c, Some(root.join(&a.path)));
            }
            Ok(rec)
        })
        .collect()
}

/// Drops households whose consumption is strictly above `cap_usd`.
pub fn filter_outliers(records: Vec<HouseholdRecord>, cap_usd: f64) -> Vec<HouseholdRecord> {
    records
        .into_iter()
        .filter(|r| r.monthly_consumption_usd <= cap_usd)
        .collect()
}
