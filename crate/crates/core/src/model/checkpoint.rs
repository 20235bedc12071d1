//! JSON checkpoints: the config plus every named parameter array.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Param, TransformerClassifier};
use crate::error::{Error, Result};

const FORMAT: &str = "tagvat-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<StoredParam>,
}

impl TransformerClassifier {
    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| StoredParam {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    values: p.value.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    /// Parses a checkpoint and validates every shape against its config.
    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Schema(format!("checkpoint: {e}")))?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let params = ck
            .params
            .into_iter()
            .map(|p| Param {
                name: p.name,
                shape: p.shape,
                value: Arc::new(p.values),
            })
            .collect();
        Self::from_params(ck.config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
