use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

/// What one subcommand last wrote: the settings it ran with and a checksum of
/// every file it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Relative path to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    /// Full effective configuration of the latest run.
    pub config: PipelineConfig,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    pub fn load(out: &Path) -> anyhow::Result<Option<Self>> {
        let path = out.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path)?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    /// Records `stage` with checksums of `artifacts` (relative to `out`) and
    /// rewrites the manifest. Other stages are kept as they were.
    pub fn record(
        out: &Path,
        config: &PipelineConfig,
        stage: &str,
        seeds: &[(&str, u64)],
        artifacts: &[String],
    ) -> anyhow::Result<StageRecord> {
        let mut stages = Self::load(out)?.map(|m| m.stages).unwrap_or_default();
        let mut sums = BTreeMap::new();
        for a in artifacts {
            sums.insert(a.clone(), sha256_file(&out.join(a))?);
        }
        let record =
            StageRecord { config_hash: config.hash(), seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(), artifacts: sums };
        stages.insert(stage.to_string(), record.clone());
        let m = Manifest {
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            stages,
        };
        fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&m)?)?;
        Ok(record)
    }
}
