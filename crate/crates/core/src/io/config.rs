use crate::error::{Error, Result};
use crate::head::ModelConfig;
use crate::synth::SynthSpec;
use crate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Where the train and test videos come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Synthetic(SynthSpec),
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Label training tubes from one randomly chosen keyframe per instance.
    #[serde(default)]
    pub single_keyframe: bool,
    /// Classes held out by the zero-shot protocol.
    #[serde(default)]
    pub excluded_classes: Vec<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let DataSection::Synthetic(spec) = &self.data {
            spec.validate()?;
            if spec.num_classes != self.model.num_classes() {
                return Err(Error::Config(format!(
                    "model has {} classes but the synthetic data has {}",
                    self.model.num_classes(),
                    spec.num_classes
                )));
            }
        }
        let classes = self.model.num_classes();
        if let Some(c) = self.excluded_classes.iter().find(|&&c| c >= classes) {
            return Err(Error::Config(format!("excluded class {c} outside 0..{classes}")));
        }
        Ok(())
    }
}

/// Parses and validates a configuration; syntax errors name the JSON path.
pub fn decode_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}
