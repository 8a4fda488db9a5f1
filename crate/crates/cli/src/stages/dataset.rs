//! `espsim make-dataset`: rolls out both pretrained policies and writes
//! class-balanced train/valid/test splits as episode JSONL files.

use std::fs;

use espsim_core::detector::{balanced_splits, BALANCE_SALT};
use espsim_core::env::{
    collect_rollouts, Environment, EpisodeJsonRecord, Observability, PlayerLabel, Rollout,
};
use espsim_core::io::write_jsonl;
use espsim_core::Result;

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::stages::{dataset_stage, dispatch_env, rel, require_policies, DATASET_SALT};

pub fn run(cfg: &ExperimentConfig, hash: &str, seed: u64) -> Result<()> {
    dispatch_env!(&cfg.env, |env| execute(&env, cfg, hash, seed))
}

fn execute<E: Environment<f64>>(
    env: &E,
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
) -> Result<()> {
    let out = &cfg.out_dir;
    let mut manifest = RunManifest::load_or_new(out)?;
    let (non, che) = require_policies(
        &manifest,
        out,
        seed,
        env.obs_width(Observability::Partial),
        env.obs_width(Observability::Full),
    )?;

    let sizes = &cfg.detector.dataset;
    let n = sizes.per_class();
    let base = seed ^ DATASET_SALT;
    let workers = cfg.learner.workers;
    eprintln!("rolling out {n} episodes per class on {} (seed {seed})", env.name());
    let non_rolls =
        collect_rollouts(&non, env, Observability::Partial, PlayerLabel::NonCheater, base, n, workers)?;
    let che_rolls = collect_rollouts(
        &che,
        env,
        Observability::Full,
        PlayerLabel::Cheater,
        base.wrapping_add(n as u64),
        n,
        workers,
    )?;
    let to_json = |rolls: &[Rollout<f64, E::State>]| {
        rolls.iter().map(|r| EpisodeJsonRecord::from_episode(env, &r.episode)).collect::<Vec<_>>()
    };
    let [train, valid, test] =
        balanced_splits(to_json(&che_rolls), to_json(&non_rolls), sizes, base ^ BALANCE_SALT)?;

    let dir = format!("datasets/seed{seed}");
    fs::create_dir_all(out.join(&dir))?;
    let mut artifacts = Vec::new();
    for (name, split) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let path = format!("{dir}/{name}.jsonl");
        write_jsonl(out.join(&path), split)?;
        eprintln!("  {path}: {} records", split.len());
        artifacts.push((name.to_string(), rel(&path)));
    }
    manifest.record(&dataset_stage(seed), hash, artifacts);
    manifest.save(out)
}
