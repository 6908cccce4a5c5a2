//! Labeled datasets on disk and the sample universes built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::ingestion::{DatasetManifest, ManifestRow};

use super::mosaic::mosaic_path;
use super::sampling::{Labeled, SplitAssignment};
use super::{HouseholdRecord, IncomeGroup, PreprocessError};

pub const LABELED_FILE: &str = "labeled.jsonl";

/// Which images feed a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InputMode {
    /// Photos of one category.
    Category(Category),
    /// One mosaic per household.
    Merged,
    /// Every photo of every category, each inheriting its household's labels.
    Pooled,
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputMode::Category(c) => write!(f, "category:{c}"),
            InputMode::Merged => f.write_str("merged"),
            InputMode::Pooled => f.write_str("pooled"),
        }
    }
}

impl FromStr for InputMode {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merged" => Ok(InputMode::Merged),
            "pooled" => Ok(InputMode::Pooled),
            _ => s
                .strip_prefix("category:")
                .and_then(|c| c.parse().ok())
                .map(InputMode::Category)
                .ok_or_else(|| PreprocessError::Domain(format!("unknown input mode {s:?}"))),
        }
    }
}

impl Serialize for InputMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One model input with its targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub family_id: String,
    pub source: InputMode,
    pub path: PathBuf,
    pub log_consumption: f64,
    pub poverty_label: Option<u8>,
}

impl Labeled for ImageSample {
    fn label(&self) -> Option<u8> {
        self.poverty_label
    }
}

/// Expands households into image samples for `mode`. Merged samples point
/// at `{root}/mosaics/{family_id}.png`; households without photos are
/// skipped.
pub fn samples_for(records: &[HouseholdRecord], mode: InputMode, root: &Path) -> Vec<ImageSample> {
    let sample = |r: &HouseholdRecord, path: PathBuf, source| ImageSample {
        family_id: r.family_id.clone(),
        source,
        path,
        log_consumption: r.log_consumption,
        poverty_label: r.poverty_label,
    };
    let mut out = Vec::new();
    for r in records {
        match mode {
            InputMode::Category(c) => {
                if let Some(p) = r.image(c) {
                    out.push(sample(r, p.to_path_buf(), mode));
                }
            }
            InputMode::Merged => {
                if r.present_categories().next().is_some() {
                    out.push(sample(r, mosaic_path(root, &r.family_id), mode));
                }
            }
            InputMode::Pooled => {
                for c in r.present_categories() {
                    out.push(sample(r, r.image(c).unwrap().to_path_buf(), InputMode::Category(c)));
                }
            }
        }
    }
    out
}

/// Sample counts per category in canonical order, then merged.
pub fn category_counts(records: &[HouseholdRecord]) -> Vec<(InputMode, usize)> {
    let mut out: Vec<(InputMode, usize)> = Category::ALL
        .iter()
        .map(|c| {
            (
                InputMode::Category(*c),
                records.iter().filter(|r| r.image(*c).is_some()).count(),
            )
        })
        .collect();
    out.push((
        InputMode::Merged,
        records
            .iter()
            .filter(|r| r.present_categories().next().is_some())
            .count(),
    ));
    out
}

/// A manifest row extended with labels and the split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRow {
    #[serde(flatten)]
    pub row: ManifestRow,
    pub log_consumption: f64,
    pub income_group: Option<IncomeGroup>,
    pub poverty_label: Option<u8>,
    pub split_assignment: Option<SplitAssignment>,
}

pub fn labeled_rows(
    manifest: &DatasetManifest,
    records: &[HouseholdRecord],
    splits: &[SplitAssignment],
) -> Vec<LabeledRow> {
    let rows: BTreeMap<&str, &ManifestRow> = manifest.rows.iter().map(|r| (r.family_id.as_str(), r)).collect();
    records
        .iter()
        .zip(splits.iter().map(Some).chain(std::iter::repeat(None)))
        .filter_map(|(rec, split)| {
            rows.get(rec.family_id.as_str()).map(|row| LabeledRow {
                row: (*row).clone(),
                log_consumption: rec.log_consumption,
                income_group: rec.income_group,
                poverty_label: rec.poverty_label,
                split_assignment: split.copied(),
            })
        })
        .collect()
}

pub fn write_labeled(path: &Path, rows: &[LabeledRow]) -> Result<(), PreprocessError> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("labeled rows serialize"));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PreprocessError::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| PreprocessError::io(path, e))
}

/// Reads a labeled dataset, resolving asset paths against `root`.
pub fn read_labeled(
    path: &Path,
    root: &Path,
) -> Result<Vec<(HouseholdRecord, Option<SplitAssignment>)>, PreprocessError> {
    let text = std::fs::read_to_string(path).map_err(|e| PreprocessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: LabeledRow = serde_json::from_str(line)
            .map_err(|e| PreprocessError::Domain(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let mut rec = HouseholdRecord::new(
            &row.row.family_id,
            &row.row.country,
            row.income_group,
            row.row.monthly_consumption_usd,
        )?;
        rec.poverty_label = row.poverty_label;
        for (c, a) in row.row.present() {
            rec.images.insert(c, Some(root.join(&a.path)));
        }
        out.push((rec, row.split_assignment));
    }
    Ok(out)
}
