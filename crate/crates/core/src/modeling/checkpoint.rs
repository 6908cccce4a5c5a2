//! Checkpoint file format: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then the weights as little-endian `f32`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics::Task;

use super::network::{BackboneSpec, Network};
use super::{ModelError, TrainConfig};

const MAGIC: &[u8; 8] = b"WVCKPT01";

/// Standardisation applied to regression targets during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub task: Task,
    pub config: TrainConfig,
    /// One-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub target_scale: Option<TargetScale>,
    pub beta: f64,
    #[serde(skip)]
    pub weights: Vec<f32>,
}

impl ModelCheckpoint {
    pub fn outputs(task: Task) -> usize {
        match task {
            Task::Regression => 1,
            Task::Classification => 2,
        }
    }

    /// Rebuilds the network described by the config snapshot.
    pub fn network(&self) -> Result<Network, ModelError> {
        let spec = BackboneSpec::from_id(&self.config.backbone_id)?;
        let mut net = Network::new(spec, Self::outputs(self.task), self.config.seed);
        net.load_weights(&self.weights)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(self).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.weights.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let mut ckpt: ModelCheckpoint =
            serde_json::from_slice(body).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let rest = &bytes[16 + len..];
        if !rest.len().is_multiple_of(4) {
            return Err(bad("weight section is not a whole number of f32"));
        }
        ckpt.weights = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ckpt.network()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
