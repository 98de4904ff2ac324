use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::numerics::write_atomic;
use crate::trainer::{smoothed_endpoints, StepMetrics, TrainConfig};

/// Window used for the smoothed first/last loss in the summary.
const SUMMARY_WINDOW: usize = 10;

/// Hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps: usize,
    pub first_loss: f64,
    pub last_loss: f64,
    pub smoothed_first_loss: f64,
    pub smoothed_last_loss: f64,
}

/// Everything needed to reproduce or audit one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Input and output files keyed by path, valued by SHA-256.
    pub hashes: BTreeMap<String, String>,
    pub checkpoint: PathBuf,
    pub metrics: Option<MetricsSummary>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn new(
        command: &str,
        cfg: &TrainConfig,
        inputs: &[&Path],
        checkpoint: &Path,
        metrics: &[StepMetrics],
        wall_clock_seconds: f64,
    ) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs.iter().copied().chain([checkpoint]) {
            hashes.insert(p.display().to_string(), sha256_file(p)?);
        }
        let summary = match (metrics.first(), metrics.last()) {
            (Some(first), Some(last)) => {
                let (sf, sl) = smoothed_endpoints(metrics, SUMMARY_WINDOW)
                    .unwrap_or((first.loss.total, last.loss.total));
                Some(MetricsSummary {
                    steps: metrics.len(),
                    first_loss: first.loss.total,
                    last_loss: last.loss.total,
                    smoothed_first_loss: sf,
                    smoothed_last_loss: sl,
                })
            }
            _ => None,
        };
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            hashes,
            checkpoint: checkpoint.to_path_buf(),
            metrics: summary,
            wall_clock_seconds,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        write_atomic(path, s.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
