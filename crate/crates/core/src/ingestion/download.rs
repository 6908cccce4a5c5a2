use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use url::Url;

use crate::category::Category;

use super::fetch::{Fetch, FetchError};
use super::filename::encode_asset_filename;
use super::scrape::FamilyEntry;
use super::{HouseholdMeta, IngestError, RawImageAsset, ScrapeConfig};

pub const IMAGES_DIR: &str = "images";
pub const QUARANTINE_DIR: &str = "quarantine";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Why one asset could not be stored.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AssetFailure {
    pub family_id: String,
    pub category: Category,
    pub remote_url: String,
    pub reason: String,
    /// Set when the bytes were kept in the quarantine directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quarantined: Option<String>,
}

/// Relative location of an asset under the output root.
pub fn asset_relative_path(meta: &HouseholdMeta, category: Category, index: u16) -> Result<PathBuf, IngestError> {
    let name = encode_asset_filename(meta, category, index)?;
    Ok(Path::new(IMAGES_DIR).join(category.slug()).join(name))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let io = |e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let tmp = path.with_extension("part");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Downloads one asset and stores it verbatim under its canonical filename.
///
/// With `config.resume` set and a file already at the target path, no
/// request is made; if `previous` describes the same file with the same
/// hash it is returned unchanged.
pub fn download_asset(
    asset_url: &Url,
    meta: &HouseholdMeta,
    category: Category,
    config: &ScrapeConfig,
    fetcher: &dyn Fetch,
    previous: Option<&RawImageAsset>,
) -> Result<RawImageAsset, AssetFailure> {
    let failure = |reason: String, quarantined: Option<String>| AssetFailure {
        family_id: meta.family_id.clone(),
        category,
        remote_url: asset_url.to_string(),
        reason,
        quarantined,
    };
    let rel = asset_relative_path(meta, category, 1).map_err(|e| failure(e.to_string(), None))?;
    let target = config.output_root.join(&rel);
    let make = |bytes: &[u8]| RawImageAsset {
        family_id: meta.family_id.clone(),
        category,
        remote_url: asset_url.to_string(),
        local_path: rel.clone(),
        content_hash: sha256_hex(bytes),
        byte_size: bytes.len() as u64,
    };

    if config.resume {
        if let Ok(existing) = fs::read(&target) {
            let asset = make(&existing);
            if let Some(prev) = previous {
                if prev.local_path == asset.local_path && prev.content_hash == asset.content_hash {
                    return Ok(prev.clone());
                }
            }
            if image::load_from_memory(&existing).is_ok() {
                return Ok(asset);
            }
            log::warn!("{} exists but does not decode; fetching again", target.display());
        }
    }

    let bytes = fetcher
        .get(asset_url)
        .map_err(|e: FetchError| failure(e.to_string(), None))?;
    if let Err(decode) = image::load_from_memory(&bytes) {
        let name = rel.file_name().unwrap();
        let q = Path::new(QUARANTINE_DIR).join(name);
        let stored = write_atomic(&config.output_root.join(&q), &bytes)
            .ok()
            .map(|_| q.display().to_string());
        return Err(failure(format!("undecodable image: {decode}"), stored));
    }
    write_atomic(&target, &bytes).map_err(|e| failure(e.to_string(), None))?;
    Ok(make(&bytes))
}

/// Downloads every asset of `families` with up to `max_concurrent` workers.
///
/// Results come back sorted by (family id, category) regardless of
/// scheduling.
pub fn download_all(
    families: &[FamilyEntry],
    config: &ScrapeConfig,
    fetcher: &dyn Fetch,
    previous: &[RawImageAsset],
) -> (Vec<RawImageAsset>, Vec<AssetFailure>) {
    let jobs: Vec<(&HouseholdMeta, Category, &Url)> = families
        .iter()
        .flat_map(|f| f.images.iter().map(move |(c, u)| (&f.meta, *c, u)))
        .collect();
    let next = Mutex::new(0usize);
    let results = Mutex::new(Vec::with_capacity(jobs.len()));
    let workers = config.max_concurrent.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&(meta, category, url)) = jobs.get(i) else {
                    break;
                };
                let prev = previous
                    .iter()
                    .find(|a| a.family_id == meta.family_id && a.category == category);
                let r = download_asset(url, meta, category, config, fetcher, prev);
                results.lock().unwrap().push(r);
            });
        }
    });
    let mut assets = Vec::new();
    let mut failures = Vec::new();
    for r in results.into_inner().unwrap() {
        match r {
            Ok(a) => assets.push(a),
            Err(f) => {
                log::warn!("{} {}: {}", f.family_id, f.category, f.reason);
                failures.push(f);
            }
        }
    }
    assets.sort_by(|a, b| (&a.family_id, a.category).cmp(&(&b.family_id, b.category)));
    failures.sort_by(|a, b| (&a.family_id, a.category).cmp(&(&b.family_id, b.category)));
    (assets, failures)
}
