use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use super::CorpusMode;
use crate::error::{Error, Result};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
    pub clip: f64,
    pub eval_interval: u64,
    /// Caps the dev tokens scored at each evaluation; the whole split when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_tokens: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-4,
            steps: 0,
            batch: 1,
            clip: 0.25,
            eval_interval: 500,
            eval_tokens: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub mode: CorpusMode,
}

/// Model keys at the top level, plus `train`, `data` and `seed`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub seed: u64,
}

impl<'de> Deserialize<'de> for ExperimentConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let mut map = serde_json::Map::deserialize(d)?;
        let mut take = |key: &str| map
            .remove(key)
            .ok_or_else(|| D::Error::custom(format!("missing field `{key}`")));
        let train = take("train")?;
        let data = take("data")?;
        let seed = take("seed")?;
        Ok(Self {
            train: TrainConfig::deserialize(train).map_err(D::Error::custom)?,
            data: DataConfig::deserialize(data).map_err(D::Error::custom)?,
            seed: u64::deserialize(seed).map_err(D::Error::custom)?,
            model: ModelConfig::deserialize(serde_json::Value::Object(map)).map_err(D::Error::custom)?,
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", t.lr)));
        }
        if !(t.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if t.batch == 0 || t.eval_interval == 0 {
            return Err(Error::Config("batch and eval_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}
