//! Run configuration (`config.json`).

use std::fs;
use std::path::Path;

use cgt_core::adversarial::PseudoAdvParams;
use cgt_core::fuzz::FuzzConfig;
use cgt_core::mutation::{Corruption, CorruptionTable, NaturalParams};
use cgt_core::nn::DecodeConfig;
use cgt_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{create_parent, Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train_val: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train_val: 600,
            n_test: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub decode: DecodeConfig,
    /// Corruption operators of the grid.
    pub corruptions: Vec<Corruption>,
    pub severities: Vec<u8>,
    /// Mutation ranges for the naturally mutated test set. The larger retry
    /// budget keeps most test images; rejected ones are left out.
    pub natural_test: NaturalParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            decode: DecodeConfig::default(),
            corruptions: Corruption::ALL.to_vec(),
            severities: vec![1, 2, 3, 4, 5],
            natural_test: NaturalParams {
                max_retries: 15,
                ..NaturalParams::default()
            },
        }
    }
}

/// Everything a run needs. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data generation, splitting, corruptions, the mutated test set
    /// and pseudo-adversarial images.
    pub seed: u64,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub fuzz: FuzzConfig,
    pub corruption: CorruptionTable,
    pub pseudo_adv: PseudoAdvParams,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            fuzz: FuzzConfig::default(),
            corruption: CorruptionTable::default(),
            pseudo_adv: PseudoAdvParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        fs::write(path, json + "\n").at(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.fuzz.validate()?;
        self.eval.natural_test.validate()?;
        if self.data.n_train_val < 3 || self.data.n_test == 0 {
            return Err(Error::Usage("need at least 3 train_val and 1 test image".into()));
        }
        for &s in &self.eval.severities {
            self.corruption.param(Corruption::Pixelate, s)?;
        }
        Ok(())
    }
}

/// SHA-256 of the canonical JSON form of a training config.
pub fn train_fingerprint(cfg: &TrainConfig) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}
