//! Self-describing JSON checkpoints for trained networks.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::net::NetShape;
use super::rng::RngState;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "smile-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learned per-step embedding table stored next to the network parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub rows: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// "denoiser", "generator" or "bc".
    pub role: String,
    pub shape: NetShape,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingRecord>,
    /// Role-specific scalar settings (dims, bounds, loss norm, ...).
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Adam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ema_shadow: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng: Option<RngState>,
}

impl Checkpoint {
    pub fn new(role: &str, shape: NetShape, params: Vec<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            role: role.to_string(),
            shape,
            params,
            embedding: None,
            meta: serde_json::Map::new(),
            optimizer: None,
            ema_shadow: None,
            rng: None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Training(format!("checkpoint serialization: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Format { line, msg, .. } => Error::Format {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the header before the full parse so old or foreign files get a
        // version error rather than a field error.
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let bad = |e: serde_json::Error| Error::Format {
            path: "<checkpoint>".into(),
            line: e.line(),
            msg: e.to_string(),
        };
        let header: Header = serde_json::from_str(text).map_err(bad)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                path: "<checkpoint>".into(),
                line: 1,
                msg: format!("not a checkpoint (format tag {:?})", header.format),
            });
        }
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                what: "checkpoint",
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(bad)?;
        if ckpt.params.len() != ckpt.shape.num_params() {
            return Err(Error::invalid(format!(
                "checkpoint holds {} parameters, architecture needs {}",
                ckpt.params.len(),
                ckpt.shape.num_params()
            )));
        }
        Ok(ckpt)
    }

    /// Checks that the role tag is `expected`.
    pub fn expect_role(&self, expected: &str) -> Result<()> {
        if self.role != expected {
            return Err(Error::invalid(format!(
                "checkpoint role is {:?}, expected {expected:?}",
                self.role
            )));
        }
        Ok(())
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::invalid(format!("checkpoint meta is missing integer {key:?}")))
    }

    pub fn meta_f64_vec(&self, key: &str) -> Result<Vec<f64>> {
        let arr = self
            .meta
            .get(key)
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::invalid(format!("checkpoint meta is missing array {key:?}")))?;
        arr.iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| Error::invalid(format!("non-numeric entry in {key:?}")))
            })
            .collect()
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::invalid(format!("checkpoint meta is missing string {key:?}")))
    }
}
