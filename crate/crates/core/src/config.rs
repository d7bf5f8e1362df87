//! Top-level run configuration shared by every command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checksum::crc64;
use crate::dataio::SynthConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub train: TrainConfig,
    /// Share of each class held out for evaluation by `train` and `ablate`.
    pub eval_fraction: f64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            eval_fraction: 0.2,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON document; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "eval_fraction: {} must lie strictly between 0 and 1",
                self.eval_fraction
            )));
        }
        Ok(())
    }

    /// Points every seeded stage at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.train.seed = seed;
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// CRC-64 of the canonical serialization with paths cleared, as 16 hex digits.
    pub fn config_hash(&self) -> String {
        let hashed = Self {
            paths: Paths::default(),
            ..self.clone()
        };
        format!("{:016x}", crc64(hashed.to_canonical_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_pretty_json()).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        for doc in [
            r#"{"bogus": 1}"#,
            r#"{"train": {"learning_rate": 0.1}}"#,
            r#"{"synth": {"dims": {"audio": 4, "video": 4, "audiovisual": 4, "x": 1}}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn invalid_values_name_field() {
        let msg = RunConfig::from_json(r#"{"synth": {"dims": {"audio": 64, "video": 0, "audiovisual": 80}}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("synth.dims.video"), "{msg}");
        let msg = RunConfig::from_json(r#"{"train": {"lambda": 2.0}}"#).unwrap_err().to_string();
        assert!(msg.contains("train.lambda"), "{msg}");
    }

    #[test]
    fn hash_tracks_content_not_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.data = Some("x.ceb".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.train.lr = 2e-3;
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
    }
}
