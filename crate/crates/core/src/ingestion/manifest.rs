//! The persisted inventory of households and their image assets.
//!
//! Stored as `manifest.jsonl` (one household per line) with a sidecar
//! `manifest.header.json`. The manifest hash covers the rows only, so an
//! unchanged dataset keeps its hash across runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::category::Category;

use super::download::{sha256_hex, AssetFailure, IMAGES_DIR, QUARANTINE_DIR};
use super::{HouseholdMeta, IngestError, RawImageAsset};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const HEADER_FILE: &str = "manifest.header.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    /// Relative to the dataset root.
    pub path: String,
    pub hash: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub family_id: String,
    pub country: String,
    pub monthly_consumption_usd: f64,
    /// Every canonical category; `None` marks a missing photo.
    pub assets: BTreeMap<Category, Option<AssetRef>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<Category, String>,
}

impl ManifestRow {
    pub fn meta(&self) -> HouseholdMeta {
        HouseholdMeta {
            family_id: self.family_id.clone(),
            country: self.country.clone(),
            monthly_consumption_usd: self.monthly_consumption_usd,
        }
    }

    pub fn present(&self) -> impl Iterator<Item = (Category, &AssetRef)> {
        self.assets.iter().filter_map(|(c, a)| a.as_ref().map(|a| (*c, a)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub created_at: DateTime<Utc>,
    pub manifest_hash: String,
    pub households: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub rows: Vec<ManifestRow>,
}

fn rows_jsonl(rows: &[ManifestRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("manifest rows serialize"));
        out.push('\n');
    }
    out
}

/// Groups assets by household. Every asset must belong to a known family.
pub fn build_manifest(
    assets: &[RawImageAsset],
    metas: &[HouseholdMeta],
    failures: &[AssetFailure],
) -> Result<DatasetManifest, IngestError> {
    let mut rows: BTreeMap<&str, ManifestRow> = BTreeMap::new();
    for m in metas {
        rows.entry(&m.family_id).or_insert_with(|| ManifestRow {
            family_id: m.family_id.clone(),
            country: m.country.clone(),
            monthly_consumption_usd: m.monthly_consumption_usd,
            assets: Category::ALL.iter().map(|c| (*c, None)).collect(),
            errors: BTreeMap::new(),
        });
    }
    let orphans: BTreeSet<String> = assets
        .iter()
        .map(|a| &a.family_id)
        .chain(failures.iter().map(|f| &f.family_id))
        .filter(|id| !rows.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        return Err(IngestError::OrphanAssets(orphans.into_iter().collect()));
    }
    for a in assets {
        let row = rows.get_mut(a.family_id.as_str()).unwrap();
        row.assets.insert(
            a.category,
            Some(AssetRef {
                path: a.local_path.to_string_lossy().replace('\\', "/"),
                hash: a.content_hash.clone(),
                bytes: a.byte_size,
            }),
        );
    }
    for f in failures {
        rows.get_mut(f.family_id.as_str())
            .unwrap()
            .errors
            .insert(f.category, f.reason.clone());
    }
    Ok(DatasetManifest::from_rows(rows.into_values().collect()))
}

impl DatasetManifest {
    pub fn from_rows(rows: Vec<ManifestRow>) -> Self {
        let manifest_hash = sha256_hex(rows_jsonl(&rows).as_bytes());
        Self {
            header: ManifestHeader {
                schema_version: SCHEMA_VERSION,
                created_at: Utc::now(),
                manifest_hash,
                households: rows.len(),
            },
            rows,
        }
    }

    pub fn hash(&self) -> &str {
        &self.header.manifest_hash
    }

    /// Total number of asset references across households.
    pub fn asset_ref_count(&self) -> usize {
        self.rows.iter().map(|r| r.present().count()).sum()
    }

    /// Distinct stored blobs keyed by content hash, with every path that
    /// references each blob.
    pub fn blobs(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for row in &self.rows {
            for (_, a) in row.present() {
                out.entry(a.hash.as_str()).or_default().push(a.path.as_str());
            }
        }
        out
    }

    /// Assets as download records, used to resume a crawl.
    pub fn assets(&self) -> Vec<RawImageAsset> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.present().map(move |(c, a)| RawImageAsset {
                    family_id: r.family_id.clone(),
                    category: c,
                    remote_url: String::new(),
                    local_path: PathBuf::from(&a.path),
                    content_hash: a.hash.clone(),
                    byte_size: a.bytes,
                })
            })
            .collect()
    }

    /// Writes `manifest.jsonl` and its header under `root`. An existing
    /// header with the same hash is kept, so rewriting an unchanged manifest
    /// is byte-identical.
    pub fn write(&mut self, root: &Path) -> Result<(), IngestError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |source| IngestError::Io { path: p, source }
        };
        fs::create_dir_all(root).map_err(io(root))?;
        let header_path = root.join(HEADER_FILE);
        if let Ok(text) = fs::read_to_string(&header_path) {
            if let Ok(old) = serde_json::from_str::<ManifestHeader>(&text) {
                if old.manifest_hash == self.header.manifest_hash && old.schema_version == SCHEMA_VERSION {
                    self.header.created_at = old.created_at;
                }
            }
        }
        let manifest_path = root.join(MANIFEST_FILE);
        fs::write(&manifest_path, rows_jsonl(&self.rows)).map_err(io(&manifest_path))?;
        let mut header = serde_json::to_string_pretty(&self.header).expect("header serializes");
        header.push('\n');
        fs::write(&header_path, header).map_err(io(&header_path))
    }

    /// Reads a manifest file; its header is expected next to it.
    pub fn read(manifest_path: &Path) -> Result<Self, IngestError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |source| IngestError::Io { path: p, source }
        };
        let text = fs::read_to_string(manifest_path).map_err(io(manifest_path))?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = serde_json::from_str(line).map_err(|e| IngestError::Manifest(format!("line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        let header_path = manifest_path.with_file_name(HEADER_FILE);
        let header: ManifestHeader = match fs::read_to_string(&header_path) {
            Ok(h) => serde_json::from_str(&h).map_err(|e| IngestError::Manifest(format!("header: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::from_rows(rows)),
            Err(e) => return Err(io(&header_path)(e)),
        };
        let actual = sha256_hex(rows_jsonl(&rows).as_bytes());
        if actual != header.manifest_hash {
            return Err(IngestError::Manifest(format!(
                "hash mismatch: header {} vs rows {actual}",
                header.manifest_hash
            )));
        }
        Ok(Self { header, rows })
    }

    /// Checks that every file under the images directory is referenced by
    /// exactly one row (or sits in quarantine) and that referenced files
    /// exist with the recorded hash.
    pub fn verify(&self, root: &Path) -> Result<(), IngestError> {
        let mut problems = Vec::new();
        let mut referenced: BTreeMap<String, usize> = BTreeMap::new();
        for row in &self.rows {
            for (_, a) in row.present() {
                *referenced.entry(a.path.clone()).or_default() += 1;
                match fs::read(root.join(&a.path)) {
                    Ok(bytes) if sha256_hex(&bytes) == a.hash => {}
                    Ok(_) => problems.push(format!("{}: hash mismatch", a.path)),
                    Err(_) => problems.push(format!("{}: missing", a.path)),
                }
            }
        }
        for (path, n) in &referenced {
            if *n > 1 {
                problems.push(format!("{path}: referenced {n} times"));
            }
        }
        let files = walkdir::WalkDir::new(root.join(IMAGES_DIR))
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file());
        for file in files {
            let rel = file
                .path()
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            if !referenced.contains_key(&rel) && !rel.starts_with(QUARANTINE_DIR) {
                problems.push(format!("{rel}: not referenced by the manifest"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(IngestError::Incomplete(problems))
        }
    }
}
