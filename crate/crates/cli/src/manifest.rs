//! Run manifest: a JSON index at the root of the output directory recording,
//! for every completed stage, the config hash that produced it and the
//! artifacts it wrote (as paths relative to the output directory). Stages
//! look their prerequisites up here, which is what enforces the dependency
//! order between subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use espsim_core::io::{load_json, save_json};
use espsim_core::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash of the resolved configuration the stage ran under.
    pub config_hash: String,
    /// Artifact name → path relative to the output directory.
    pub artifacts: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    fn new() -> Self {
        RunManifest { tool_version: env!("CARGO_PKG_VERSION").to_string(), stages: BTreeMap::new() }
    }

    /// Loads `out_dir/manifest.json`, or starts a fresh manifest if the
    /// output directory has none yet.
    pub fn load_or_new(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if path.exists() {
            load_json(&path)
        } else {
            Ok(RunManifest::new())
        }
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        save_json(out_dir.join(MANIFEST_FILE), self)
    }

    /// Records (or overwrites) a completed stage.
    pub fn record<I, S>(&mut self, stage: &str, config_hash: &str, artifacts: I)
    where
        I: IntoIterator<Item = (S, PathBuf)>,
        S: Into<String>,
    {
        let artifacts = artifacts.into_iter().map(|(k, v)| (k.into(), v)).collect();
        self.stages.insert(
            stage.to_string(),
            StageRecord { config_hash: config_hash.to_string(), artifacts },
        );
    }

    /// Looks up an artifact of a prerequisite stage, naming the command that
    /// produces it when it is missing.
    pub fn require(&self, stage: &str, artifact: &str, produced_by: &str) -> Result<PathBuf> {
        let record = self.stages.get(stage).ok_or_else(|| {
            Error::Config(format!(
                "stage `{stage}` has not run in this output directory; run `espsim {produced_by}` first"
            ))
        })?;
        record.artifacts.get(artifact).cloned().ok_or_else(|| {
            Error::Config(format!(
                "stage `{stage}` did not record artifact `{artifact}`; re-run `espsim {produced_by}`"
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_and_resolves_requirements() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::load_or_new(dir.path()).unwrap();
        assert!(m.stages.is_empty());
        m.record("pretrain:seed1", "abc", [("noncheater", PathBuf::from("checkpoints/n.json"))]);
        m.save(dir.path()).unwrap();

        let loaded = RunManifest::load_or_new(dir.path()).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(
            loaded.require("pretrain:seed1", "noncheater", "pretrain --seed 1").unwrap(),
            PathBuf::from("checkpoints/n.json")
        );
    }

    #[test]
    fn missing_stage_error_names_the_producing_command() {
        let m = RunManifest::new();
        let err = m.require("pretrain:seed1", "noncheater", "pretrain --seed 1").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("pretrain:seed1"), "{msg}");
        assert!(msg.contains("espsim pretrain --seed 1"), "{msg}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn missing_artifact_in_present_stage_is_also_actionable() {
        let mut m = RunManifest::new();
        m.record("pretrain:seed1", "abc", Vec::<(String, PathBuf)>::new());
        let err = m.require("pretrain:seed1", "cheater", "pretrain --seed 1").unwrap_err();
        assert!(err.to_string().contains("cheater"));
    }
}
