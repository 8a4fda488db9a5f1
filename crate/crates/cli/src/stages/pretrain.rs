//! `espsim pretrain`: trains the non-cheater on partial observations and the
//! pure cheater on full observations, saving best-evaluation checkpoints and
//! training curves.

use std::fs;

use espsim_core::env::{Environment, Observability, PlayerLabel};
use espsim_core::io::PolicyCheckpoint;
use espsim_core::learner::pretrain_policy;
use espsim_core::{Error, Result};

use crate::config::ExperimentConfig;
use crate::manifest::RunManifest;
use crate::stages::{dispatch_env, pretrain_stage, rel, write_curve, PURE_CHEATER_SALT};

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
    fs::create_dir_all(out.join("checkpoints"))?;
    fs::create_dir_all(out.join("curves"))?;
    let mut manifest = RunManifest::load_or_new(out)?;

    let jobs = [
        (
            "noncheater",
            Observability::Partial,
            PlayerLabel::NonCheater,
            cfg.pretrain.noncheater_budget,
            seed,
        ),
        (
            "cheater",
            Observability::Full,
            PlayerLabel::Cheater,
            cfg.pretrain.cheater_budget,
            seed ^ PURE_CHEATER_SALT,
        ),
    ];

    let mut artifacts = Vec::new();
    let mut diverged: Option<String> = None;
    for (name, mode, label, budget, train_seed) in jobs {
        eprintln!("pretraining {name} on {} ({budget} env steps, seed {seed})", env.name());
        let res = pretrain_policy::<f64, E>(env, mode, label, &cfg.learner, budget, train_seed)?;
        let ckpt = format!("checkpoints/{name}_seed{seed}.json");
        PolicyCheckpoint::new(res.policy, None).save(out.join(&ckpt))?;
        let curve = format!("curves/pretrain_{name}_seed{seed}.csv");
        write_curve(&out.join(&curve), &res.curve)?;
        eprintln!(
            "  best eval return {:.4} after {} env steps ({} checkpoint, {} curve)",
            res.best_eval, res.env_steps, ckpt, curve
        );
        artifacts.push((name.to_string(), rel(&ckpt)));
        artifacts.push((format!("{name}_curve"), rel(&curve)));
        if let Some(it) = res.diverged_at {
            diverged.get_or_insert(format!("{name} pretraining diverged at iteration {it}"));
        }
    }

    manifest.record(&pretrain_stage(seed), hash, artifacts);
    manifest.save(out)?;
    match diverged {
        // The best finite checkpoints are on disk either way; divergence is
        // still reported as the numeric failure it is.
        Some(msg) => Err(Error::Numeric(msg)),
        None => Ok(()),
    }
}
