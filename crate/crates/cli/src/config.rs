//! Run configuration: a TOML file overlaid by command-line flags.
//!
//! Precedence, lowest first: built-in defaults (per architecture preset for
//! training), the config file, explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dvmatch::pipeline::StandaloneMode;
use dvmatch::synth::SynthConfig;
use dvmatch::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Ensemble,
    Ncc,
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    Include,
    Exclude,
    Both,
}

/// Arithmetic used for training and inference. Checkpoints store f64
/// either way.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl ModeChoice {
    pub fn modes(self) -> Vec<StandaloneMode> {
        match self {
            ModeChoice::Include => vec![StandaloneMode::Include],
            ModeChoice::Exclude => vec![StandaloneMode::Exclude],
            ModeChoice::Both => vec![StandaloneMode::Include, StandaloneMode::Exclude],
        }
    }
}

/// Contents of a config file. Every key is optional; `train` and `synth`
/// tables are merged key by key onto their defaults.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub manifest: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub arch: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scorer: Option<ScorerKind>,
    pub standalone_mode: Option<ModeChoice>,
    pub precision: Option<Precision>,
    pub delta: Option<f64>,
    pub scores: Option<PathBuf>,
    pub train: Option<toml::Table>,
    pub synth: Option<toml::Table>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Ok(cfg.relative_to(base))
    }

    /// Paths in a config file are relative to the file itself.
    fn relative_to(mut self, base: &Path) -> Self {
        for p in [
            &mut self.manifest,
            &mut self.split,
            &mut self.checkpoint,
            &mut self.out,
            &mut self.scores,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }
}

/// Serializes `base`, replaces the keys present in `patch`, and reads the
/// result back, so unknown keys are still rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&toml::Table>, what: &str) -> Result<T> {
    let mut table = toml::Table::try_from(base).context("serializing defaults")?;
    if let Some(p) = patch {
        for (k, v) in p {
            table.insert(k.clone(), v.clone());
        }
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| UsageError(format!("[{what}] table: {e}")).into())
}

/// Effective configuration of one run, written as `config.toml` into the
/// output directory.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Snapshot {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standalone_mode: Option<ModeChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<Precision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

impl Snapshot {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = toml::to_string(self).context("serializing config snapshot")?;
        let path = dir.join("config.toml");
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
