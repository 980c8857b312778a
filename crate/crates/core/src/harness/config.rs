use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SynthConfig, TrainingSetSpec, TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::learn::{ContrastiveConfig, PseudoLabelConfig, TrainConfig};
use crate::nn::Family;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    Synthetic(SynthConfig),
    Manifest(PathBuf),
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Synthetic(SynthConfig::default())
    }
}

mod set_names {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::data::TrainingSetSpec;

    pub fn serialize<S: Serializer>(v: &[TrainingSetSpec], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|t| t.name()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<TrainingSetSpec>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|n| n.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// Everything a run depends on. Serialized in full into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub seed: u64,
    pub train_fraction: f64,
    pub presets: Vec<Family>,
    #[serde(with = "set_names")]
    pub training_sets: Vec<TrainingSetSpec>,
    /// Final per-cell training.
    pub supervised: TrainConfig,
    /// Teacher training for the semi-supervised sets.
    pub semi: PseudoLabelConfig,
    pub teacher_preset: Family,
    /// Encoder pretraining for the fully unlabeled set.
    pub contrastive: ContrastiveConfig,
    pub encoder_preset: Family,
    /// Cells (`"TS3/mini-vgg"`) or stages (`"TS3"`) forced to fail.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fault_injection: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSource::default(),
            seed: 42,
            train_fraction: TRAIN_FRACTION,
            presets: Family::ALL.to_vec(),
            training_sets: TrainingSetSpec::all(),
            supervised: TrainConfig::default(),
            semi: PseudoLabelConfig::default(),
            teacher_preset: Family::MiniRes,
            contrastive: ContrastiveConfig::default(),
            encoder_preset: Family::MiniRes,
            fault_injection: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::at_path(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Manifest paths in a config file are relative to the file.
        if let CorpusSource::Manifest(p) = &mut cfg.corpus {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new("")).join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.presets.is_empty() || self.training_sets.is_empty() {
            return Err(Error::Config(
                "at least one preset and one training set are required".into(),
            ));
        }
        let mut sets = self.training_sets.clone();
        sets.sort();
        sets.dedup();
        let mut presets = self.presets.clone();
        presets.sort();
        presets.dedup();
        if sets.len() != self.training_sets.len() || presets.len() != self.presets.len() {
            return Err(Error::Config("duplicate training set or preset".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if let CorpusSource::Synthetic(s) = &self.corpus {
            s.validate()?;
        }
        self.supervised.validate()?;
        self.semi.validate()?;
        self.contrastive.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn faulted(&self, key: &str) -> bool {
        self.fault_injection.iter().any(|k| k == key)
    }
}
