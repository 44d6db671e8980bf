use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assessor::AssessorConfig;
use crate::dialogue::DialogueConfig;
use crate::error::{Error, Result};
use crate::synthesis::{SynthesisConfig, UrgConfig};

/// Everything a run needs. Defaults reproduce the published settings
/// (history of 7 turns, 512-token inputs, 10 dialogue epochs and 20 assessor
/// epochs at batch 16 and learning rate 1e-5, 100 filters of width 5,
/// 100 LSTM units, dropout 0.3).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub phq_bank: Option<PathBuf>,
    pub port: u16,
    pub dev_fraction: f64,
    pub synthesis: SynthesisConfig,
    pub urg: UrgConfig,
    pub dialogue: DialogueConfig,
    pub assessor: AssessorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data_dir: None,
            phq_bank: None,
            port: 8080,
            dev_fraction: 0.1,
            synthesis: SynthesisConfig::default(),
            urg: UrgConfig::default(),
            dialogue: DialogueConfig::default(),
            assessor: AssessorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| e.to_string())
        } else {
            toml::from_str(&raw).map_err(|e| e.to_string())
        };
        let config: RunConfig = parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!("dev_fraction {} outside (0, 1)", self.dev_fraction)));
        }
        if self.dialogue.embed == 0 || self.dialogue.hidden == 0 || self.dialogue.max_len < 3 {
            return Err(Error::Config("dialogue sizes must be positive and max_len at least 3".into()));
        }
        self.synthesis.validate()?;
        self.urg.train.validate()?;
        self.dialogue.train.validate()?;
        self.assessor.validate()
    }

    /// Propagates one seed to every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synthesis.seed = seed;
        self.urg.train.seed = seed;
        self.dialogue.train.seed = seed;
        self.assessor.train.seed = seed;
        self.assessor.init_seed = seed;
    }
}
