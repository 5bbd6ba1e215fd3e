use std::path::{Path, PathBuf};

use ccpa_core::case_model::{ieee14, parse_case, GridCase};
use ccpa_core::evaluation::ExperimentConfig;
use ccpa_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Top-level JSON configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case file used when `--case` is left at its default.
    pub case: Option<PathBuf>,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    pub fn resolve(path: Option<&Path>, fast: bool) -> Result<Self> {
        match (path, fast) {
            (Some(_), true) => Err(Error::InvalidConfig(
                "--fast cannot be combined with a config file".into(),
            )),
            (Some(p), false) => Self::load(p),
            (None, true) => Ok(Self {
                case: None,
                experiment: ExperimentConfig::fast(),
            }),
            (None, false) => Ok(Self::default()),
        }
    }

    pub fn grid(&self, case_arg: &str) -> Result<GridCase> {
        match (&self.case, case_arg) {
            (Some(p), "ieee14") => load_case(&p.to_string_lossy()),
            _ => load_case(case_arg),
        }
    }
}

pub fn load_case(spec: &str) -> Result<GridCase> {
    if spec == "ieee14" {
        return Ok(ieee14());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    parse_case(&text)
}
