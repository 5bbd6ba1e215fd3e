use std::path::{Path, PathBuf};

use ccpa_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to replay a run.
#[derive(Debug, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: &'a RunConfig,
    pub seeds: Vec<u64>,
    pub grid_fingerprint: Option<String>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub extra: serde_json::Value,
}

pub fn artifact(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Artifact {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub fn artifacts(paths: &[PathBuf]) -> Result<Vec<Artifact>> {
    paths.iter().map(|p| artifact(p)).collect()
}

impl<'a> Provenance<'a> {
    pub fn new(config: &'a RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            config,
            seeds: Vec::new(),
            grid_fingerprint: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    /// Writes `<out>.provenance.json` next to the primary output.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let mut name = out.as_os_str().to_owned();
        name.push(".provenance.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
