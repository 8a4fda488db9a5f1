//! `espsim eval`: scores the pretrained pair with a pretrained detector on
//! fresh episodes and writes the per-player 4-metric table (ranking metrics
//! against a disjoint non-cheater baseline, average reward, average length).

use std::fs;

use espsim_core::detector::record_from_episode;
use espsim_core::env::{
    collect_rollouts, Environment, Observability, PlayerLabel, Rollout,
};
use espsim_core::io::DetectorCheckpoint;
use espsim_core::{Error, Result};

use crate::config::{DetectorVariant, ExperimentConfig};
use crate::manifest::RunManifest;
use crate::stages::{
    detector_stage, dispatch_env, rel, require_policies, score_table, write_score_table,
    EVAL_SALT,
};

pub fn run(
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    variant: DetectorVariant,
) -> Result<()> {
    dispatch_env!(&cfg.env, |env| execute(&env, cfg, hash, seed, variant))
}

fn execute<E: Environment<f64>>(
    env: &E,
    cfg: &ExperimentConfig,
    hash: &str,
    seed: u64,
    variant: DetectorVariant,
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
    let det_rel = manifest.require(
        &detector_stage(variant, seed),
        "checkpoint",
        &format!("pretrain-detector --detector {variant} --seed {seed}"),
    )?;
    let detector = DetectorCheckpoint::<f64>::load(out.join(&det_rel))?.model;
    if let Some(w) = detector.input_width() {
        if w != env.detector_width() {
            return Err(Error::Contract(format!(
                "detector checkpoint `{}` reads {w}-wide inputs, environment encodes {}",
                det_rel.display(),
                env.detector_width()
            )));
        }
    }

    // Three disjoint fresh seed blocks: a non-cheater baseline, a non-cheater
    // player block (so its row measures chance detectability honestly), and
    // the pure-cheater block.
    let n = cfg.adversarial.eval_episodes;
    let base = seed ^ EVAL_SALT;
    let workers = cfg.learner.workers;
    eprintln!("evaluating pretrained pair with the {variant} detector ({n} episodes per block)");
    let blocks = [
        collect_rollouts(&non, env, Observability::Partial, PlayerLabel::NonCheater, base, n, workers)?,
        collect_rollouts(
            &non,
            env,
            Observability::Partial,
            PlayerLabel::NonCheater,
            base.wrapping_add(n as u64),
            n,
            workers,
        )?,
        collect_rollouts(
            &che,
            env,
            Observability::Full,
            PlayerLabel::Cheater,
            base.wrapping_add(2 * n as u64),
            n,
            workers,
        )?,
    ];
    let to_records = |rolls: &[Rollout<f64, E::State>]| {
        rolls.iter().map(|r| record_from_episode(env, &r.episode)).collect::<Vec<_>>()
    };
    let baseline = to_records(&blocks[0]);
    let non_player = to_records(&blocks[1]);
    let che_player = to_records(&blocks[2]);
    let rows = score_table(
        &detector,
        &baseline,
        &[("non_cheater", &non_player), ("pure_cheater", &che_player)],
    )?;

    fs::create_dir_all(out.join("reports"))?;
    let report = format!("reports/eval_{variant}_seed{seed}.csv");
    write_score_table(&out.join(&report), &rows)?;
    manifest.record(
        &format!("eval:{variant}:seed{seed}"),
        hash,
        [("report".to_string(), rel(&report))],
    );
    manifest.save(out)
}
