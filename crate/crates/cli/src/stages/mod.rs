//! The seven experiment stages behind the subcommands, plus the plumbing
//! they share: environment dispatch, seed-stream salts, checkpoint loading
//! with width validation, and the score-table computation used by both
//! `pretrain-detector` and `eval`.

pub mod adv;
pub mod dataset;
pub mod detect;
pub mod eval;
pub mod pretrain;
pub mod report;
pub mod sweep;

use std::path::{Path, PathBuf};

use espsim_core::detector::{evaluate_detector, DetectorModel, DetectorRecord};
use espsim_core::io::{csv_float, PolicyCheckpoint};
use espsim_core::learner::CurvePoint;
use espsim_core::nn::PolicyNet;
use espsim_core::{Error, Result};

use crate::config::DetectorVariant;
use crate::manifest::RunManifest;

/// Salts keeping the per-stage seed streams disjoint while every stage is
/// still driven by the one `--seed` value.
pub const PURE_CHEATER_SALT: u64 = 0x5EED_00C4;
pub const GATE_INIT_SALT: u64 = 0x5EED_6A7E;
pub const DATASET_SALT: u64 = 0x5EED_DA7A;
pub const DETECTOR_SALT: u64 = 0x5EED_0DE7;
pub const EVAL_SALT: u64 = 0x5EED_E7A1;

/// Instantiates the configured game and runs `$body` with `$env` bound to
/// the concrete environment. The stages are generic over the environment
/// type, so the one `match` on the game lives here.
macro_rules! dispatch_env {
    ($env_cfg:expr, |$env:ident| $body:expr) => {{
        let env_cfg = $env_cfg;
        match env_cfg.game {
            espsim_core::env::Game::Gridworld => {
                let game_cfg = env_cfg.gridworld.clone().ok_or_else(|| {
                    espsim_core::Error::Config("missing [env.gridworld] section".into())
                })?;
                let $env = espsim_core::env::gridworld::Gridworld::new(game_cfg)?;
                $body
            }
            espsim_core::env::Game::Blackjack => {
                let game_cfg = env_cfg.blackjack.clone().ok_or_else(|| {
                    espsim_core::Error::Config("missing [env.blackjack] section".into())
                })?;
                let $env = espsim_core::env::blackjack::Blackjack::new(game_cfg)?;
                $body
            }
        }
    }};
}
pub(crate) use dispatch_env;

/// Loads a policy checkpoint and checks its input width against the
/// observation width the configured environment will feed it.
pub fn load_policy(
    out_dir: &Path,
    rel: &Path,
    expect_input: usize,
    role: &str,
) -> Result<PolicyNet<f64>> {
    let ck = PolicyCheckpoint::<f64>::load(out_dir.join(rel))?;
    if ck.policy.arch.input != expect_input {
        return Err(Error::Contract(format!(
            "{role} checkpoint `{}` reads {}-wide observations but the configured environment \
             provides {expect_input}; it was trained under a different env config",
            rel.display(),
            ck.policy.arch.input,
        )));
    }
    Ok(ck.policy)
}

/// Manifest keys and artifact paths shared across stages.
pub fn pretrain_stage(seed: u64) -> String {
    format!("pretrain:seed{seed}")
}

pub fn dataset_stage(seed: u64) -> String {
    format!("dataset:seed{seed}")
}

pub fn detector_stage(variant: DetectorVariant, seed: u64) -> String {
    format!("detector:{variant}:seed{seed}")
}

pub fn require_policies(
    manifest: &RunManifest,
    out_dir: &Path,
    seed: u64,
    partial_width: usize,
    full_width: usize,
) -> Result<(PolicyNet<f64>, PolicyNet<f64>)> {
    let stage = pretrain_stage(seed);
    let hint = format!("pretrain --seed {seed}");
    let non_rel = manifest.require(&stage, "noncheater", &hint)?;
    let che_rel = manifest.require(&stage, "cheater", &hint)?;
    let non = load_policy(out_dir, &non_rel, partial_width, "non-cheater")?;
    let che = load_policy(out_dir, &che_rel, full_width, "pure-cheater")?;
    Ok((non, che))
}

/// Writes a policy-training curve in the fixed column order shared by both
/// pretraining stages.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let header = [
        "iteration",
        "env_steps",
        "train_return",
        "train_length",
        "eval_return",
        "policy_loss",
        "value_loss",
        "entropy",
    ];
    let rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            vec![
                p.iteration.to_string(),
                p.env_steps.to_string(),
                csv_float(p.train_return),
                csv_float(p.train_length),
                opt_cell(p.eval_return),
                csv_float(p.policy_loss),
                csv_float(p.value_loss),
                csv_float(p.entropy),
            ]
        })
        .collect();
    espsim_core::io::write_csv(path, &header, &rows)
}

/// Empty cell for a missing optional value.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

/// One row of the player-vs-baseline score table (the 4-metric layout of the
/// evaluation reports): ranking metrics of this player's episodes against a
/// disjoint non-cheater baseline, plus the player's in-game averages.
pub struct TableRow {
    pub player: String,
    pub ap: f64,
    pub auroc: f64,
    pub avg_reward: f64,
    pub avg_length: f64,
}

/// Scores each player block against the shared non-cheater baseline. The
/// non-cheater row uses a block disjoint from the baseline, so its expected
/// AP/AUROC is the 0.5 chance level.
pub fn score_table(
    detector: &DetectorModel<f64>,
    baseline: &[DetectorRecord<f64>],
    players: &[(&str, &[DetectorRecord<f64>])],
) -> Result<Vec<TableRow>> {
    if baseline.is_empty() {
        return Err(Error::Contract("score table needs a non-empty baseline block".into()));
    }
    let mut rows = Vec::with_capacity(players.len());
    for (name, records) in players {
        if records.is_empty() {
            return Err(Error::Contract(format!("score table got an empty block for {name}")));
        }
        let mut scored: Vec<DetectorRecord<f64>> = Vec::with_capacity(baseline.len() + records.len());
        scored.extend(baseline.iter().cloned().map(|mut r| {
            r.label = 0;
            r
        }));
        scored.extend(records.iter().cloned().map(|mut r| {
            r.label = 1;
            r
        }));
        let (ap, auroc) = evaluate_detector(detector, &scored)?;
        let n = records.len() as f64;
        rows.push(TableRow {
            player: name.to_string(),
            ap,
            auroc,
            avg_reward: records.iter().map(|r| r.episode_return).sum::<f64>() / n,
            avg_length: records.iter().map(|r| r.length as f64).sum::<f64>() / n,
        });
    }
    Ok(rows)
}

/// Writes the score table and echoes it to stdout.
pub fn write_score_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let header = ["player", "ap", "auroc", "avg_reward", "avg_length"];
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.player.clone(),
                csv_float(r.ap),
                csv_float(r.auroc),
                csv_float(r.avg_reward),
                csv_float(r.avg_length),
            ]
        })
        .collect();
    espsim_core::io::write_csv(path, &header, &csv_rows)?;
    println!("{:<14} {:>8} {:>8} {:>12} {:>12}", "player", "AP", "AUROC", "avg reward", "avg length");
    for r in rows {
        println!(
            "{:<14} {:>8.3} {:>8.3} {:>12.3} {:>12.3}",
            r.player, r.ap, r.auroc, r.avg_reward, r.avg_length
        );
    }
    Ok(())
}

/// Relative path helper: stage files store out_dir-relative paths in the
/// manifest and join them on use.
pub fn rel(path: &str) -> PathBuf {
    PathBuf::from(path)
}
