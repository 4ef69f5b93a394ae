//! Run manifests: one `manifest.json` per output directory recording the
//! command, its full configuration, seeds, input and output hashes, and
//! timings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub timings: BTreeMap<String, f64>,
    pub versions: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize) -> Result<Self> {
        let versions = BTreeMap::from([
            ("recourse-hmc".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("format".to_string(), FORMAT_VERSION.to_string()),
        ]);
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            timings: BTreeMap::new(),
            versions,
            schema_hash: None,
            warnings: Vec::new(),
            converged: None,
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn time(&mut self, name: &str, since: Instant) {
        self.timings.insert(name.to_string(), since.elapsed().as_secs_f64());
    }

    pub fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }

    /// Hash every listed output in `dir` and write the manifest there.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            let name = p.strip_prefix(dir).unwrap_or(p).display().to_string();
            self.outputs.insert(name, sha256_file(p)?);
        }
        let path = dir.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }

    /// The manifest in the directory holding `file`.
    pub fn beside(file: &Path) -> Result<Self> {
        let dir = file.parent().unwrap_or(Path::new("."));
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
