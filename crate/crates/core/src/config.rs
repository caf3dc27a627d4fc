//! Run configuration: one JSON file with strict keys for every stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ExperimentGrid;
use crate::generator::GeneratorConfig;
use crate::synth::SynthConfig;
use crate::vqvae::VqVaeConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "data/dataset.jsonl".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every stage seed (synthesis, both trainings and
    /// the grid seeds).
    pub seed: Option<u64>,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub vqvae: VqVaeConfig,
    pub generator: GeneratorConfig,
    pub grid: ExperimentGrid,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    /// Copy of the config with the top-level seed pushed into every stage.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.synth.seed = seed;
            out.vqvae.seed = seed;
            out.generator.seed = seed;
            out.grid.seeds = vec![seed];
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.vqvae.validate()?;
        self.generator.validate()?;
        self.grid.validate(self.vqvae.downsample)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"vqvae": {"codebok_size": 8}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        let c = RunConfig::from_json(r#"{"vqvae": {"codebook_size": 8}}"#).unwrap();
        assert_eq!(c.vqvae.codebook_size, 8);
        assert_eq!(c.vqvae.code_dim, VqVaeConfig::default().code_dim);
    }

    #[test]
    fn resolved_round_trips() {
        let c = RunConfig {
            seed: Some(11),
            ..Default::default()
        }
        .resolved();
        assert_eq!((c.synth.seed, c.vqvae.seed, c.generator.seed), (11, 11, 11));
        assert_eq!(c.grid.seeds, vec![11]);
        c.validate().unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
    }
}
