//! Experiment definition: a TOML file resolved against environment-variable
//! overrides, validated, and fingerprinted so every artifact can be traced to
//! the exact configuration that produced it.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use espsim_core::adversarial::{AdvMode, AdversarialConfig, CheaterArch};
use espsim_core::detector::{DetectorTrainConfig, SplitSizes};
use espsim_core::env::EnvConfig;
use espsim_core::learner::TrainConfig;
use espsim_core::{Error, Result};

/// Prefix for environment-variable overrides. `ESPSIM_SECTION__KEY=value`
/// sets `section.key`; nest deeper with more `__` separators
/// (e.g. `ESPSIM_ENV__BLACKJACK__REVEAL_DEPTH=4`). Values are parsed as TOML
/// literals and fall back to strings, so `ESPSIM_ADVERSARIAL__MODE=joint`
/// and `ESPSIM_ADVERSARIAL__LAMBDAS=[0.1,1.0]` both work.
pub const ENV_PREFIX: &str = "ESPSIM_";

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Step budgets for the two pretrained policies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainSection {
    /// Environment steps spent training the partially-observing non-cheater.
    #[serde(default = "default_budget")]
    pub noncheater_budget: usize,
    /// Environment steps spent training the fully-observing pure cheater.
    #[serde(default = "default_budget")]
    pub cheater_budget: usize,
}

fn default_budget() -> usize {
    1_000_000
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection { noncheater_budget: default_budget(), cheater_budget: default_budget() }
    }
}

/// Which detector design a stage instantiates. Mirrors the model variants;
/// the scalar designs ignore the hidden widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorVariant {
    Trajectory,
    Length,
    Reward,
}

impl std::fmt::Display for DetectorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DetectorVariant::Trajectory => "trajectory",
            DetectorVariant::Length => "length",
            DetectorVariant::Reward => "reward",
        })
    }
}

impl FromStr for DetectorVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "trajectory" => Ok(DetectorVariant::Trajectory),
            "length" => Ok(DetectorVariant::Length),
            "reward" => Ok(DetectorVariant::Reward),
            other => Err(format!("expected trajectory|length|reward, got `{other}`")),
        }
    }
}

/// Value parsers for the flags that mirror config enums.
pub fn parse_variant(s: &str) -> std::result::Result<DetectorVariant, String> {
    s.parse()
}

pub fn parse_mode(s: &str) -> std::result::Result<AdvMode, String> {
    match s {
        "joint" => Ok(AdvMode::Joint),
        "cheater_only" => Ok(AdvMode::CheaterOnly),
        other => Err(format!("expected joint|cheater_only, got `{other}`")),
    }
}

pub fn parse_arch(s: &str) -> std::result::Result<CheaterArch, String> {
    match s {
        "structured" => Ok(CheaterArch::Structured),
        "unstructured" => Ok(CheaterArch::Unstructured),
        other => Err(format!("expected structured|unstructured, got `{other}`")),
    }
}

fn default_variant() -> DetectorVariant {
    DetectorVariant::Trajectory
}

/// Detector design, supervised-training hyperparameters and dataset sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectorSection {
    #[serde(default = "default_variant")]
    pub variant: DetectorVariant,
    #[serde(flatten)]
    pub train: DetectorTrainConfig,
    /// Per-class record counts for the train/valid/test splits.
    #[serde(default)]
    pub dataset: SplitSizes,
}

impl Default for DetectorVariant {
    fn default() -> Self {
        default_variant()
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_eval_episodes() -> usize {
    256
}

/// Adversarial loop settings plus the sweep axes. The flattened base carries
/// the single-run values; the list fields define the sweep grid and fall back
/// to the corresponding base value when empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSection {
    #[serde(flatten)]
    pub base: AdversarialConfig,
    /// Sweep axis for the detection-penalty weight; empty means `[lambda]`.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    /// Seeds every stage defaults to; sweeps run each combination per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Optional sweep axes; empty means the single configured value.
    #[serde(default)]
    pub detectors: Vec<DetectorVariant>,
    #[serde(default)]
    pub modes: Vec<AdvMode>,
    #[serde(default)]
    pub cheaters: Vec<CheaterArch>,
    /// Save intermediate checkpoints every N iterations; 0 disables them.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Episode count per policy for the fresh evaluation written after
    /// training (and used by `eval`).
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        AdversarialSection {
            base: AdversarialConfig::default(),
            lambdas: Vec::new(),
            seeds: default_seeds(),
            detectors: Vec::new(),
            modes: Vec::new(),
            cheaters: Vec::new(),
            checkpoint_every: 0,
            eval_episodes: default_eval_episodes(),
        }
    }
}

/// The whole experiment definition. Every subcommand takes one of these; the
/// stages share `out_dir` and record their artifacts in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub learner: TrainConfig,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub adversarial: AdversarialSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.learner.validate()?;
        self.detector.train.validate()?;
        self.detector.dataset.validate()?;
        self.adversarial.base.validate()?;
        if self.adversarial.seeds.is_empty() {
            return Err(Error::Config("adversarial.seeds must not be empty".into()));
        }
        for &l in &self.adversarial.lambdas {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::Config(format!(
                    "adversarial.lambdas entries must be finite and non-negative, got {l}"
                )));
            }
        }
        if self.adversarial.eval_episodes == 0 {
            return Err(Error::Config("adversarial.eval_episodes must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved config's canonical JSON form; recorded in
    /// the manifest next to every artifact.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Format(format!("serializing config: {e}")))?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// A parsed config plus its fingerprint and the override keys that shaped it.
pub struct LoadedConfig {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub overrides: Vec<String>,
}

/// Reads the TOML file, applies `ESPSIM_*` environment overrides and the
/// `--out` flag, validates, and fingerprints the result.
pub fn load(path: &Path, out_flag: Option<&Path>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let overrides = apply_env_overrides(&mut table, std::env::vars())?;
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(out) = out_flag {
        cfg.out_dir = out.to_path_buf();
    }
    cfg.validate()?;
    let hash = cfg.hash()?;
    Ok(LoadedConfig { cfg, hash, overrides })
}

/// Applies `ESPSIM_SECTION__KEY=value` overrides onto the raw TOML tree in
/// sorted key order (so the application order never depends on the process
/// environment layout). Returns the keys applied.
fn apply_env_overrides(
    root: &mut toml::Table,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<Vec<String>> {
    let mut pending: Vec<(String, String)> =
        vars.filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    pending.sort();
    let mut applied = Vec::with_capacity(pending.len());
    for (key, raw) in pending {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override key `{key}`")));
        }
        let mut node = &mut *root;
        for seg in &path[..path.len() - 1] {
            node = node
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    Error::Config(format!("override `{key}` descends into non-table key `{seg}`"))
                })?;
        }
        node.insert(path[path.len() - 1].clone(), parse_toml_literal(&raw));
        applied.push(key);
    }
    Ok(applied)
}

/// Interprets an override value as a TOML literal (number, bool, array,
/// quoted string...); anything that does not parse is taken verbatim as a
/// string, so bare enum values need no quoting.
fn parse_toml_literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
