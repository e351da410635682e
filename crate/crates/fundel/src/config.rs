//! File-based pipeline configuration.
//!
//! One TOML file drives every stage. Sections map onto the stage configs
//! (`[tapt]`, `[md]`, `[biencoder]`, `[selector]`, `[encoder]`, `[paths]`);
//! omitted fields take the defaults below, which reproduce the reference
//! training schedule — 4 bi-encoder rounds of 2 epochs at lr 2e-5 with batch
//! 16, token limits 64/256, top-10 hard negatives for NIL mentions, and a τ
//! grid that includes the operating point 0.042.
//!
//! The top-level `seed` is authoritative: loading a config copies it into
//! every stage, so one number reproduces the whole pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::biencoder::BiEncoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::linker::SelectorConfig;
use crate::mention::{MdConfig, TaptConfig};

/// Environment variable that overrides `paths.artifacts`.
pub const ARTIFACTS_ENV: &str = "FUNDEL_ARTIFACTS";

/// Input corpora and the artifacts root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Registry JSONL (one funder per line).
    pub registry: PathBuf,
    /// Train/validation/test corpora, JSONL documents.
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    /// Pretraining sentences, one per line.
    pub sentences: PathBuf,
    /// Where trained artifacts land. The `FUNDEL_ARTIFACTS` environment
    /// variable overrides this when set.
    pub artifacts: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            registry: "data/registry.jsonl".into(),
            train: "data/train.jsonl".into(),
            val: "data/val.jsonl".into(),
            test: "data/test.jsonl".into(),
            sentences: "data/sentences.txt".into(),
            artifacts: "artifacts".into(),
        }
    }
}

/// Encoder geometry, minus the vocabulary size (which is data-dependent and
/// fixed when the vocabulary is built).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    pub layer_norm_eps: f64,
    pub initializer_range: f64,
    /// Vocabulary cap handed to the vocabulary builder.
    pub max_vocab: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let base = EncoderConfig::bert_base(30522);
        EncoderSettings {
            hidden_size: base.hidden_size,
            num_layers: base.num_layers,
            num_heads: base.num_heads,
            intermediate_size: base.intermediate_size,
            max_position_embeddings: base.max_position_embeddings,
            layer_norm_eps: base.layer_norm_eps,
            initializer_range: base.initializer_range,
            max_vocab: 30522,
        }
    }
}

impl EncoderSettings {
    /// Concrete architecture once the vocabulary size is known.
    pub fn to_encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_size: self.hidden_size,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            intermediate_size: self.intermediate_size,
            max_position_embeddings: self.max_position_embeddings,
            layer_norm_eps: self.layer_norm_eps,
            initializer_range: self.initializer_range,
        }
    }
}

/// Everything the pipeline needs, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; copied into every stage config on load, so per-stage
    /// seeds in the file are ignored.
    pub seed: u64,
    pub paths: PathsConfig,
    pub encoder: EncoderSettings,
    pub tapt: TaptConfig,
    pub md: MdConfig,
    pub biencoder: BiEncoderConfig,
    pub selector: SelectorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut config = PipelineConfig {
            seed: 13,
            paths: PathsConfig::default(),
            encoder: EncoderSettings::default(),
            tapt: TaptConfig::default(),
            md: MdConfig::default(),
            biencoder: BiEncoderConfig::default(),
            selector: SelectorConfig::default(),
        };
        config.propagate_seed();
        config
    }
}

impl PipelineConfig {
    /// Parse and validate a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))?;
        config.propagate_seed();
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Copy the master seed into every stage.
    pub fn propagate_seed(&mut self) {
        self.tapt.seed = self.seed;
        self.md.seed = self.seed;
        self.biencoder.seed = self.seed;
    }

    /// Range-check every stage. Path existence is checked by the commands
    /// that actually read each path.
    pub fn validate(&self) -> Result<()> {
        self.encoder
            .to_encoder_config(self.encoder.max_vocab)
            .validate()?;
        self.tapt.validate()?;
        self.md.validate()?;
        self.biencoder.validate()?;
        self.selector.validate()?;
        if self.biencoder.mention_max_len > self.encoder.max_position_embeddings
            || self.biencoder.entity_max_len > self.encoder.max_position_embeddings
        {
            return Err(Error::InvalidConfig(format!(
                "biencoder token limits ({}/{}) exceed encoder.max_position_embeddings ({})",
                self.biencoder.mention_max_len,
                self.biencoder.entity_max_len,
                self.encoder.max_position_embeddings
            )));
        }
        Ok(())
    }

    /// Hash of the effective configuration (after seed propagation), for
    /// provenance records.
    pub fn canonical_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    /// The artifacts root: the `FUNDEL_ARTIFACTS` environment variable when
    /// set, else `paths.artifacts`.
    pub fn artifacts_root(&self) -> PathBuf {
        match std::env::var_os(ARTIFACTS_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.paths.artifacts.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_schedule() {
        let config = PipelineConfig::default();
        assert_eq!(config.biencoder.rounds, 4);
        assert_eq!(config.biencoder.epochs_per_round, 2);
        assert_eq!(config.biencoder.lr, 2e-5);
        assert_eq!(config.biencoder.batch_size, 16);
        assert_eq!(config.biencoder.mention_max_len, 64);
        assert_eq!(config.biencoder.entity_max_len, 256);
        assert_eq!(config.biencoder.k_nil, 10);
        assert!(config.selector.tau_grid.contains(&0.042));
        assert_eq!(config.tapt.steps, 1000);
        assert_eq!(config.tapt.batch_size, 2048);
        assert_eq!(config.tapt.mask_fraction, 0.15);
        assert_eq!(config.selector.n_candidates, 12);
        config.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let config = PipelineConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        config.save(&path).unwrap();
        let loaded = PipelineConfig::load(&path).unwrap();
        assert_eq!(loaded, config);
        assert_eq!(loaded.canonical_hash(), config.canonical_hash());
    }

    #[test]
    fn master_seed_overrides_stage_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "seed = 99\n\n[tapt]\nseed = 1\nsteps = 5\n").unwrap();
        let config = PipelineConfig::load(&path).unwrap();
        assert_eq!(config.seed, 99);
        assert_eq!(config.tapt.seed, 99, "stage seed in the file is ignored");
        assert_eq!(config.tapt.steps, 5, "other stage fields are respected");
        assert_eq!(config.md.seed, 99);
        assert_eq!(config.biencoder.seed, 99);
    }

    #[test]
    fn invalid_fields_name_themselves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "[biencoder]\nlr = -1.0\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("biencoder.lr"), "{err}");

        std::fs::write(&path, "[tapt]\nmask_fraction = 1.5\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("mask_fraction"), "{err}");

        std::fs::write(&path, "[selector]\ntau_grid = [2.0]\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("tau_grid"), "{err}");
    }

    #[test]
    fn malformed_toml_reports_the_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        std::fs::write(&path, "[md]\nepochs = \"three\"\n").unwrap();
        let err = PipelineConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
    }

    #[test]
    fn artifacts_env_var_wins() {
        // Serialized via a lock-free trick: this test is the only one in the
        // crate touching the variable.
        let config = PipelineConfig::default();
        std::env::remove_var(ARTIFACTS_ENV);
        assert_eq!(config.artifacts_root(), PathBuf::from("artifacts"));
        std::env::set_var(ARTIFACTS_ENV, "/tmp/elsewhere");
        assert_eq!(config.artifacts_root(), PathBuf::from("/tmp/elsewhere"));
        std::env::remove_var(ARTIFACTS_ENV);
    }
}
