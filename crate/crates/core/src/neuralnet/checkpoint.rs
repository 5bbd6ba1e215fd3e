//! JSON checkpoint of named parameter tensors.
//!
//! ```json
//! {
//!   "format": "ccpa-cnn/1",
//!   "architecture": {"input_len": 54, "conv": [...], "outputs": 20},
//!   "tensors": [{"name": "conv0.weight", "shape": [128, 1, 5], "data": [...]}, ...],
//!   "train_config": {...} | null,
//!   "seed": 7 | null,
//!   "meta": {...} | null,
//!   "input_norm": {"shift": [...], "scale": [...]} | null
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Architecture, CnnModel, InputNorm};
use super::tensor::{ParamSet, Tensor};
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::meta::MetaProvenance;

pub const CHECKPOINT_FORMAT: &str = "ccpa-cnn/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub tensors: Vec<NamedTensor>,
    pub train_config: Option<TrainConfig>,
    pub seed: Option<u64>,
    pub meta: Option<MetaProvenance>,
    #[serde(default)]
    pub input_norm: Option<InputNorm>,
}

impl Checkpoint {
    pub fn from_model(model: &CnnModel, train_config: Option<TrainConfig>, seed: Option<u64>) -> Self {
        let tensors = model
            .arch
            .param_names()
            .into_iter()
            .zip(&model.params.0)
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: model.arch.clone(),
            tensors,
            train_config,
            seed,
            meta: None,
            input_norm: model.input_norm.clone(),
        }
    }

    pub fn to_model(&self) -> Result<CnnModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::SchemaMismatch(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let names = self.architecture.param_names();
        if names.len() != self.tensors.len()
            || names.iter().zip(&self.tensors).any(|(n, t)| *n != t.name)
        {
            return Err(Error::SchemaMismatch(
                "checkpoint tensor names do not match the architecture".into(),
            ));
        }
        let tensors = self
            .tensors
            .iter()
            .map(|t| Tensor::from_vec(&t.shape, t.data.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut model = CnnModel::from_params(self.architecture.clone(), ParamSet(tensors))?;
        model.set_input_norm(self.input_norm.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::SchemaMismatch(e.to_string()))
    }
}
