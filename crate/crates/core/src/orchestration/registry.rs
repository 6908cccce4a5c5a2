//! Append-only run registry.
//!
//! `{runs_dir}/registry.jsonl` holds one line per status change:
//! `{"seq", "prev", "hash", "entry"}` where `hash = sha256(prev ‖ entry
//! JSON)` and `prev` is the previous line's hash (64 zeros for the first).
//! Any edit to an earlier line breaks the chain. Appends hold an exclusive
//! lock on the file.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ingestion::sha256_hex;

use super::OrchestrationError;

pub const REGISTRY_FILE: &str = "registry.jsonl";
const GENESIS: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRegistryEntry {
    pub run_id: String,
    pub recipe: String,
    pub config_hash: String,
    pub status: RunStatus,
    /// Relative to the run directory.
    pub artifacts: Vec<String>,
    /// Completed stages in execution order.
    pub stages: Vec<StageTiming>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    seq: u64,
    prev: String,
    hash: String,
    entry: RunRegistryEntry,
}

fn link_hash(prev: &str, entry: &RunRegistryEntry) -> String {
    let json = serde_json::to_string(entry).expect("entries serialize");
    sha256_hex(format!("{prev}{json}").as_bytes())
}

/// Parses and verifies the whole chain.
fn parse_chain(text: &str, path: &Path) -> Result<Vec<RunRegistryEntry>, OrchestrationError> {
    let integrity = |line: usize, message: String| OrchestrationError::Integrity {
        path: path.display().to_string(),
        line,
        message,
    };
    let mut prev = GENESIS.to_string();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line: Line = serde_json::from_str(raw).map_err(|e| integrity(n, format!("unparseable: {e}")))?;
        if line.seq != i as u64 {
            return Err(integrity(n, format!("sequence {} out of order", line.seq)));
        }
        if line.prev != prev {
            return Err(integrity(n, "previous-hash link broken".into()));
        }
        let expect = link_hash(&prev, &line.entry);
        if line.hash != expect {
            return Err(integrity(n, "hash mismatch".into()));
        }
        prev = line.hash;
        out.push(line.entry);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(integrity(out.len(), "truncated final line".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Registry {
    path: PathBuf,
}

impl Registry {
    pub fn open(runs_dir: &Path) -> Self {
        Self {
            path: runs_dir.join(REGISTRY_FILE),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn io(&self, e: std::io::Error) -> OrchestrationError {
        OrchestrationError::Io {
            path: self.path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Every entry in append order, after verifying the chain. A missing
    /// file is an empty registry.
    pub fn entries(&self) -> Result<Vec<RunRegistryEntry>, OrchestrationError> {
        match fs::read_to_string(&self.path) {
            Ok(text) => parse_chain(&text, &self.path),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(self.io(e)),
        }
    }

    pub fn append(&self, entry: &RunRegistryEntry) -> Result<(), OrchestrationError> {
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| self.io(e))?;
        }
        let mut file: File = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&self.path)
            .map_err(|e| self.io(e))?;
        file.lock().map_err(|e| self.io(e))?;
        let mut text = String::new();
        file.seek(SeekFrom::Start(0)).map_err(|e| self.io(e))?;
        file.read_to_string(&mut text).map_err(|e| self.io(e))?;
        let existing = parse_chain(&text, &self.path)?;
        let prev = text
            .lines()
            .last()
            .map(|l| serde_json::from_str::<Line>(l).expect("verified above").hash)
            .unwrap_or_else(|| GENESIS.to_string());
        let line = Line {
            seq: existing.len() as u64,
            hash: link_hash(&prev, entry),
            prev,
            entry: entry.clone(),
        };
        let mut json = serde_json::to_string(&line).expect("lines serialize");
        json.push('\n');
        file.write_all(json.as_bytes()).map_err(|e| self.io(e))?;
        file.sync_data().map_err(|e| self.io(e))?;
        file.unlock().map_err(|e| self.io(e))
    }

    /// Latest entry per run, ordered by first appearance.
    pub fn list_runs(&self) -> Result<Vec<RunRegistryEntry>, OrchestrationError> {
        let mut out: Vec<RunRegistryEntry> = Vec::new();
        for e in self.entries()? {
            match out.iter_mut().find(|x| x.run_id == e.run_id) {
                Some(slot) => *slot = e,
                None => out.push(e),
            }
        }
        Ok(out)
    }

    pub fn show_run(&self, run_id: &str) -> Result<RunRegistryEntry, OrchestrationError> {
        self.list_runs()?
            .into_iter()
            .find(|e| e.run_id == run_id)
            .ok_or_else(|| OrchestrationError::UnknownRun(run_id.to_string()))
    }
}
