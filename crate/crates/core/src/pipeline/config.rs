use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::interpret::IgConfig;
use crate::model::{mix_seed, ModelConfig};
use crate::train::TrainConfig;

pub const ENV_RUN_SEED: &str = "RUN_SEED";
pub const ENV_RUN_DIR: &str = "RUN_DIR";

const STREAM_MODEL: u64 = 101;
const STREAM_TRAIN: u64 = 102;
const STREAM_SYNTH: u64 = 103;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub max_size: usize,
    pub min_freq: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            max_size: 8192,
            min_freq: 2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunPaths {
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

/// Settings of one pipeline run. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Source of every component seed, see [`component_seed`].
    pub seed: u64,
    pub run_dir: PathBuf,
    pub paths: RunPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ig: IgConfig,
    pub vocab: VocabConfig,
    pub synth: SynthConfig,
    /// Keep URL text next to the URL tags.
    pub keep_url_body: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_dir: PathBuf::from("runs/default"),
            paths: RunPaths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ig: IgConfig::default(),
            vocab: VocabConfig::default(),
            synth: SynthConfig::default(),
            keep_url_body: false,
        }
    }
}

/// Per-component seeds derived from the run seed: `model` initialization,
/// `train` sampling and dropout, `synth` corpus generation.
pub fn component_seed(run_seed: u64, component: &str) -> Result<u64> {
    let stream = match component {
        "model" => STREAM_MODEL,
        "train" => STREAM_TRAIN,
        "synth" => STREAM_SYNTH,
        other => return Err(Error::Config(format!("unknown seed component {other:?}"))),
    };
    Ok(mix_seed(run_seed, stream))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (or defaults) with `RUN_SEED` and `RUN_DIR` from `env`
    /// applied on top. Command-line flags go on top of the result.
    pub fn resolve<F>(file: Option<&Path>, env: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<String>,
    {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        if let Some(s) = env(ENV_RUN_SEED) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_RUN_SEED}={s:?} is not an unsigned integer")))?;
        }
        if let Some(d) = env(ENV_RUN_DIR) {
            cfg.run_dir = PathBuf::from(d);
        }
        Ok(cfg)
    }

    /// Copy with the component seeds derived from `seed`.
    pub fn seeded(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.model.seed = component_seed(self.seed, "model")?;
        cfg.train.seed = component_seed(self.seed, "train")?;
        cfg.synth.seed = component_seed(self.seed, "synth")?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.ig.validate()?;
        self.synth.validate()
    }
}
