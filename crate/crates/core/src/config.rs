//! Run configuration: one TOML file with `[model]`, `[trainer]`, `[data]`,
//! `[decode]`, `[sweep]` and `[paths]` sections. Missing keys fall back to
//! the chosen preset; unknown keys are errors. The resolved configuration is
//! written back out in full.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthSpec;
use crate::decode::DecodeConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{SweepGrid, TrainerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub labeled: SynthSpec,
    pub unlabeled: SynthSpec,
    pub valid: SynthSpec,
    /// Utterances split off the labeled tail when no validation corpus is
    /// given.
    pub valid_split: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let base = SynthSpec::default();
        Self {
            labeled: SynthSpec {
                num_utts: 500,
                seed: 1,
                id_prefix: "lab".into(),
                ..base.clone()
            },
            unlabeled: SynthSpec {
                num_utts: 5_000,
                seed: 2,
                id_prefix: "unl".into(),
                ..base.clone()
            },
            valid: SynthSpec {
                num_utts: 200,
                seed: 3,
                id_prefix: "val".into(),
                ..base
            },
            valid_split: 50,
            min_duration_s: 0.02,
            max_duration_s: 3.3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub trainer: TrainerConfig,
    pub data: DataConfig,
    pub decode: DecodeConfig,
    pub sweep: SweepGrid,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Defaults for a preset: `toy` (desk-scale training) or `paper`
    /// (the full-size architecture; too large to train here).
    pub fn preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        let trainer = TrainerConfig::preset(name)?;
        let sweep = SweepGrid::ablation(vec![0, 1, 2], trainer.lr_unsup / trainer.lr_sup);
        Ok(Self {
            preset: name.to_string(),
            seed: 0,
            model,
            trainer,
            data: DataConfig::default(),
            decode: DecodeConfig::default(),
            sweep,
            paths: PathsConfig::default(),
        })
    }

    /// Parses `text` over the defaults of `preset` (or of the file's own
    /// `preset` key, or `toy`).
    pub fn from_toml(text: &str, preset: Option<&str>) -> Result<Self> {
        let file: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let name = match (preset, file.get("preset")) {
            (Some(p), _) => p.to_string(),
            (None, Some(toml::Value::String(p))) => p.clone(),
            (None, Some(_)) => return Err(Error::Config("preset must be a string".into())),
            (None, None) => "toy".to_string(),
        };
        let mut merged = toml::Table::try_from(Self::preset(&name)?)
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, file);
        merged.insert("preset".into(), toml::Value::String(name));
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        // the run seed drives the trainer
        cfg.trainer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<&str>) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path)?, preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        self.decode.validate()?;
        if self.data.min_duration_s > self.data.max_duration_s {
            return Err(Error::Config(format!(
                "min_duration_s {} exceeds max_duration_s {}",
                self.data.min_duration_s, self.data.max_duration_s
            )));
        }
        Ok(())
    }

    /// Sets the run seed: model initialization, the trainer's streams and
    /// the synthetic corpora (`3s+1`, `3s+2`, `3s+3`) all follow it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.trainer.seed = seed;
        self.data.labeled.seed = 3 * seed + 1;
        self.data.unlabeled.seed = 3 * seed + 2;
        self.data.valid.seed = 3 * seed + 3;
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

/// Overlays `over` onto `base`, descending into tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_preset() {
        let cfg = RunConfig::from_toml("", None).unwrap();
        assert_eq!(cfg, RunConfig::preset("toy").unwrap());
        let cfg = RunConfig::from_toml("", Some("paper")).unwrap();
        assert_eq!(cfg.model, ModelConfig::paper_base());
    }

    #[test]
    fn partial_sections_overlay_defaults() {
        let cfg = RunConfig::from_toml("[trainer]\nupdate_ratio = 5\n[model]\nctx_layers = 3\n", None)
            .unwrap();
        assert_eq!(cfg.trainer.update_ratio, 5);
        assert_eq!(cfg.model.ctx_layers, 3);
        assert_eq!(cfg.model.ctx_hidden, ModelConfig::toy().ctx_hidden);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(
            RunConfig::from_toml("[trainer]\nupdate_ration = 5\n", None),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_toml("bogus = 1\n", None), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[trainer]\nupdate_ratio = 0\n", None),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_toml("[[[", None).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml("seed = 4\n[decode]\nbeam_size = 8\n", None).unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap(), None).unwrap();
        assert_eq!(back, cfg);
    }
}
