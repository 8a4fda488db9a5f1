//! `espsim adv-train`: one adversarial co-training run. Streams the
//! per-iteration metric history to CSV while training, saves the co-trained
//! checkpoints, and finishes with a fresh evaluation of the final cheater
//! against the final detector.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use espsim_core::adversarial::{
    adversarial_train, relative_reward, AdvMode, AdversarialCheater, CheaterArch,
    IterationMetrics,
};
use espsim_core::detector::{record_from_episode, evaluate_detector};
use espsim_core::env::{
    collect_rollouts, Environment, Observability, PlayerLabel,
};
use espsim_core::io::{csv_float, CheaterCheckpoint, DetectorCheckpoint};
use espsim_core::{Error, Result};

use crate::config::{DetectorVariant, ExperimentConfig};
use crate::manifest::RunManifest;
use crate::stages::{
    detector_stage, dispatch_env, opt_cell, rel, require_policies, EVAL_SALT, GATE_INIT_SALT,
};

/// Per-invocation overrides of the configured adversarial run.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunOverrides {
    pub lambda: Option<f64>,
    pub mode: Option<AdvMode>,
    pub detector: Option<DetectorVariant>,
    pub cheater: Option<CheaterArch>,
}

/// Final record of one adversarial run; persisted as `final.json` in the run
/// directory and aggregated by `sweep`. The metric fields come from a fresh
/// post-training evaluation (final cheater and detector, unseen seeds).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub lambda: f64,
    pub mode: AdvMode,
    pub detector: DetectorVariant,
    pub cheater: CheaterArch,
    pub seed: u64,
    pub run_dir: String,
    pub iterations: usize,
    pub env_steps: usize,
    pub diverged_at: Option<usize>,
    pub ap: f64,
    pub auroc: f64,
    pub cheater_reward: f64,
    pub cheater_length: f64,
    pub noncheater_reward: f64,
    pub noncheater_length: f64,
    /// Share of the pure cheating advantage retained; absent when the
    /// reference rewards coincide.
    pub relative_reward: Option<f64>,
    /// Mean gate weight over the evaluation episodes (structured runs only).
    pub mean_omega: Option<f64>,
}

/// The `adv-train` subcommand: a run that stopped on a numeric failure still
/// writes its artifacts, then reports the failure through the exit code.
pub fn run(cfg: &ExperimentConfig, seed: u64, ov: &RunOverrides) -> Result<()> {
    let summary = execute_run(cfg, seed, ov)?;
    match summary.diverged_at {
        Some(it) => Err(Error::Numeric(format!(
            "adversarial training diverged at iteration {it}; last finite checkpoints are in {}",
            summary.run_dir
        ))),
        None => Ok(()),
    }
}

/// Runs one adversarial configuration to completion and returns its summary.
/// Divergence is reported in the summary rather than as an error so sweeps
/// can record it and move on.
pub fn execute_run(
    cfg: &ExperimentConfig,
    seed: u64,
    ov: &RunOverrides,
) -> Result<RunSummary> {
    dispatch_env!(&cfg.env, |env| execute(&env, cfg, seed, ov))
}

const HISTORY_HEADER: [&str; 14] = [
    "iteration",
    "env_steps",
    "ap",
    "auroc",
    "cheater_reward",
    "cheater_length",
    "noncheater_reward",
    "noncheater_length",
    "shaped_return",
    "mean_omega",
    "policy_loss",
    "value_loss",
    "entropy",
    "detector_loss",
];

fn history_row(m: &IterationMetrics) -> String {
    [
        m.iteration.to_string(),
        m.env_steps.to_string(),
        csv_float(m.ap),
        csv_float(m.auroc),
        csv_float(m.cheater_reward),
        csv_float(m.cheater_length),
        csv_float(m.noncheater_reward),
        csv_float(m.noncheater_length),
        csv_float(m.shaped_return),
        opt_cell(m.mean_omega),
        csv_float(m.policy_loss),
        csv_float(m.value_loss),
        csv_float(m.entropy),
        opt_cell(m.detector_loss),
    ]
    .join(",")
}

fn execute<E: Environment<f64>>(
    env: &E,
    cfg: &ExperimentConfig,
    seed: u64,
    ov: &RunOverrides,
) -> Result<RunSummary> {
    // Resolve the effective run configuration and fingerprint it, so the
    // manifest ties the run's artifacts to what actually executed.
    let mut eff = cfg.clone();
    if let Some(l) = ov.lambda {
        eff.adversarial.base.lambda = l;
    }
    if let Some(m) = ov.mode {
        eff.adversarial.base.mode = m;
    }
    if let Some(a) = ov.cheater {
        eff.adversarial.base.cheater_arch = a;
    }
    if let Some(d) = ov.detector {
        eff.detector.variant = d;
    }
    eff.validate()?;
    let run_hash = eff.hash()?;
    let acfg = eff.adversarial.base.clone();
    let variant = eff.detector.variant;

    let out = &cfg.out_dir;
    let mut manifest = RunManifest::load_or_new(out)?;
    let (non, pure) = require_policies(
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
    let det_ck = DetectorCheckpoint::<f64>::load(out.join(&det_rel))?;
    if let Some(w) = det_ck.model.input_width() {
        if w != env.detector_width() {
            return Err(Error::Contract(format!(
                "detector checkpoint `{}` reads {w}-wide inputs, environment encodes {}",
                det_rel.display(),
                env.detector_width()
            )));
        }
    }

    let cheater = match acfg.cheater_arch {
        CheaterArch::Structured => AdversarialCheater::structured(
            non.clone(),
            pure.clone(),
            acfg.gate_hidden.clone(),
            seed ^ GATE_INIT_SALT,
        )?,
        CheaterArch::Unstructured => AdversarialCheater::unstructured(pure.clone()),
    };

    let run_name = format!(
        "lambda{}_{}_{}_{}_seed{}",
        acfg.lambda, acfg.mode, variant, acfg.cheater_arch, seed
    );
    let run_rel = format!("runs/{run_name}");
    let run_dir = out.join(&run_rel);
    fs::create_dir_all(&run_dir)?;
    eprintln!(
        "adversarial run {run_name}: {} iterations x {} episodes/player on {}",
        acfg.iterations,
        acfg.episodes_per_iter,
        env.name()
    );

    let mut writer = BufWriter::new(File::create(run_dir.join("history.csv"))?);
    writeln!(writer, "{}", HISTORY_HEADER.join(","))?;
    let mut sink_err: Option<Error> = None;
    let every = eff.adversarial.checkpoint_every;
    let res = adversarial_train(env, cheater, &non, det_ck.model, &acfg, seed, |m, ch, dt| {
        if sink_err.is_some() {
            return;
        }
        let mut sink = || -> Result<()> {
            writeln!(writer, "{}", history_row(m))?;
            writer.flush()?;
            if every > 0 && (m.iteration + 1) % every == 0 {
                let tag = m.iteration + 1;
                CheaterCheckpoint::new(ch.clone(), None)
                    .save(run_dir.join(format!("iter{tag:05}_cheater.json")))?;
                DetectorCheckpoint::new(dt.clone(), None)
                    .save(run_dir.join(format!("iter{tag:05}_detector.json")))?;
            }
            Ok(())
        };
        sink_err = sink().err();
        if (m.iteration + 1) % 10 == 0 || m.iteration == 0 {
            eprintln!(
                "  iter {:>4}: auroc {:.3} cheater reward {:.3} shaped {:.3}",
                m.iteration, m.auroc, m.cheater_reward, m.shaped_return
            );
        }
    })?;
    writer.flush()?;
    drop(writer);
    if let Some(e) = sink_err {
        return Err(e);
    }

    CheaterCheckpoint::new(res.cheater.clone(), None).save(run_dir.join("cheater.json"))?;
    DetectorCheckpoint::new(res.detector.clone(), None).save(run_dir.join("detector.json"))?;

    let summary = final_eval(env, cfg, &res.cheater, &res.detector, &non, &pure, seed, &acfg, variant, &run_rel, &res)?;
    espsim_core::io::save_json(run_dir.join("final.json"), &summary)?;

    manifest.record(
        &format!("adv:{run_name}"),
        &run_hash,
        [
            ("history".to_string(), rel(&format!("{run_rel}/history.csv"))),
            ("cheater".to_string(), rel(&format!("{run_rel}/cheater.json"))),
            ("detector".to_string(), rel(&format!("{run_rel}/detector.json"))),
            ("final".to_string(), rel(&format!("{run_rel}/final.json"))),
        ],
    );
    manifest.save(out)?;
    Ok(summary)
}

/// Fresh episodes for the final record: the co-trained cheater and the frozen
/// non-cheater each play an unseen seed block, scored by the final detector;
/// the pure cheater plays a third block to anchor the relative reward.
#[allow(clippy::too_many_arguments)]
fn final_eval<E: Environment<f64>>(
    env: &E,
    cfg: &ExperimentConfig,
    cheater: &AdversarialCheater<f64>,
    detector: &espsim_core::detector::DetectorModel<f64>,
    non: &espsim_core::nn::PolicyNet<f64>,
    pure: &espsim_core::nn::PolicyNet<f64>,
    seed: u64,
    acfg: &espsim_core::adversarial::AdversarialConfig,
    variant: DetectorVariant,
    run_rel: &str,
    res: &espsim_core::adversarial::AdvResult<f64>,
) -> Result<RunSummary> {
    let n = cfg.adversarial.eval_episodes;
    let base = seed ^ EVAL_SALT;
    let workers = cfg.learner.workers;
    let non_rolls =
        collect_rollouts(non, env, Observability::Partial, PlayerLabel::NonCheater, base, n, workers)?;
    let che_rolls = collect_rollouts(
        cheater,
        env,
        Observability::Full,
        PlayerLabel::Cheater,
        base.wrapping_add(n as u64),
        n,
        workers,
    )?;
    let pure_rolls = collect_rollouts(
        pure,
        env,
        Observability::Full,
        PlayerLabel::Cheater,
        base.wrapping_add(2 * n as u64),
        n,
        workers,
    )?;

    let records: Vec<_> = non_rolls
        .iter()
        .chain(che_rolls.iter())
        .map(|r| record_from_episode(env, &r.episode))
        .collect();
    let (ap, auroc) = evaluate_detector(detector, &records)?;

    let mean = |rolls: &[espsim_core::env::Rollout<f64, E::State>]| {
        let n = rolls.len() as f64;
        let reward = rolls.iter().map(|r| r.episode.total_return).sum::<f64>() / n;
        let length = rolls.iter().map(|r| r.episode.length as f64).sum::<f64>() / n;
        (reward, length)
    };
    let (che_reward, che_length) = mean(&che_rolls);
    let (non_reward, non_length) = mean(&non_rolls);
    let (pure_reward, _) = mean(&pure_rolls);

    let omegas: Vec<f64> =
        che_rolls.iter().flat_map(|r| r.steps.iter().filter_map(|s| s.omega)).collect();
    let mean_omega =
        (!omegas.is_empty()).then(|| omegas.iter().sum::<f64>() / omegas.len() as f64);

    Ok(RunSummary {
        lambda: acfg.lambda,
        mode: acfg.mode,
        detector: variant,
        cheater: acfg.cheater_arch,
        seed,
        run_dir: run_rel.to_string(),
        iterations: res.history.len(),
        env_steps: res.history.last().map_or(0, |m| m.env_steps),
        diverged_at: res.diverged_at,
        ap,
        auroc,
        cheater_reward: che_reward,
        cheater_length: che_length,
        noncheater_reward: non_reward,
        noncheater_length: non_length,
        relative_reward: relative_reward(che_reward, non_reward, pure_reward).ok(),
        mean_omega,
    })
}

/// Column layout shared by the sweep aggregate; kept next to the summary so
/// the two cannot drift apart.
pub const SUMMARY_HEADER: [&str; 17] = [
    "lambda",
    "detector",
    "mode",
    "cheater",
    "seed",
    "status",
    "run_dir",
    "iterations",
    "env_steps",
    "ap",
    "auroc",
    "cheater_reward",
    "cheater_length",
    "noncheater_reward",
    "noncheater_length",
    "relative_reward",
    "mean_omega",
];

pub fn summary_row(s: &RunSummary) -> Vec<String> {
    vec![
        csv_float(s.lambda),
        s.detector.to_string(),
        s.mode.to_string(),
        s.cheater.to_string(),
        s.seed.to_string(),
        match s.diverged_at {
            Some(it) => format!("diverged@{it}"),
            None => "ok".to_string(),
        },
        s.run_dir.clone(),
        s.iterations.to_string(),
        s.env_steps.to_string(),
        csv_float(s.ap),
        csv_float(s.auroc),
        csv_float(s.cheater_reward),
        csv_float(s.cheater_length),
        csv_float(s.noncheater_reward),
        csv_float(s.noncheater_length),
        opt_cell(s.relative_reward),
        opt_cell(s.mean_omega),
    ]
}

/// Writes `final.json` data for a whole sweep as one aggregate CSV.
pub fn write_aggregate(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let csv_rows: Vec<Vec<String>> = rows.iter().map(summary_row).collect();
    espsim_core::io::write_csv(path, &SUMMARY_HEADER, &csv_rows)
}
